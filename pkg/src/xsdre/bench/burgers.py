"""1D viscous Burgers on (0, 1) with homogeneous Dirichlet ends.

Second-order central differences on a uniform grid of n interior nodes.  All
operators carry the mesh-width measure, so M = h I and inner products
approximate L2 ones.  Validation problem: same quadratic structure as the
flow benchmark but without the divergence constraint.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..model import BilinearOperator, QuadraticSystem
from . import BenchmarkSpec, _check_cap

DEFAULT_ACTUATORS = ((0.2, 0.3), (0.6, 0.7))   # support intervals
DEFAULT_SENSORS = (0.25, 0.75)                 # observation points


def make_burgers(spec: BenchmarkSpec, forcing=None) -> QuadraticSystem:
    """v_t = nu v_xx - v v_x + B u (+ f); nu = 1/reynolds.

    B columns are indicator functions of the actuator intervals; C rows
    average the state over a five-node window around each sensor point.
    ``forcing`` is an optional callable x -> f(x) (manufactured-solution
    studies); it is discretized with the same measure weight as everything
    else.
    """
    n = spec.resolution[0]
    _check_cap(n)
    nu = 1.0 / spec.reynolds
    h = 1.0 / (n + 1)
    x = np.arange(1, n + 1) * h

    M = sp.identity(n, format="csr") * h
    A = (nu / h) * sp.diags(
        [np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]
    )

    # advection -h * v_i (w_{i+1} - w_{i-1}) / (2h); Dirichlet ends drop terms
    rows, left, right, vals = [], [], [], []
    for i in range(n):
        if i + 1 < n:
            rows.append(i); left.append(i); right.append(i + 1); vals.append(-0.5)
        if i - 1 >= 0:
            rows.append(i); left.append(i); right.append(i - 1); vals.append(+0.5)
    N = BilinearOperator(n, rows, left, right, vals)

    intervals = spec.actuators or DEFAULT_ACTUATORS
    B = np.zeros((n, len(intervals)))
    for k, (a, b) in enumerate(intervals):
        B[(x >= a) & (x <= b), k] = h
    if not np.all(B.any(axis=0)):
        raise ValueError("an actuator interval contains no grid node")

    points = spec.sensors or DEFAULT_SENSORS
    C = np.zeros((len(points), n))
    for k, s in enumerate(points):
        idx = np.flatnonzero(np.abs(x - s) <= 2.5 * h)
        if idx.size == 0:
            raise ValueError("a sensor window contains no grid node")
        C[k, idx] = 1.0 / idx.size

    f = h * np.asarray(forcing(x), dtype=float) if forcing is not None else None
    meta = {"kind": "burgers", "x": x, "h": h, "nu": nu, "seed": spec.seed}
    return QuadraticSystem(M=M, A=sp.csr_matrix(A), N=N, B=B, C=C, f=f, meta=meta)
