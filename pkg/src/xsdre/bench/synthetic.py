"""Seeded random quadratic systems for solver oracles.

The linear part is damping plus sparse circulation plus a uniform shift
that grows with the Reynolds parameter, so instances move from safely
stable to mildly unstable in a controlled way.  A certified Lipschitz
bound for the state-dependent coefficient is recorded in the metadata.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..model import BilinearOperator, QuadraticSystem
from . import BenchmarkSpec, _check_cap


def make_synthetic(spec: BenchmarkSpec, n_constraints: int = 0,
                   n_inputs: int = 2, n_outputs: int = 2) -> QuadraticSystem:
    n = spec.resolution[0]
    _check_cap(n)
    rng = np.random.default_rng(spec.seed)

    damping = sp.diags(1.0 + rng.random(n))
    S0 = sp.random(n, n, density=min(3.0 / n, 1.0), random_state=rng,
                   data_rvs=rng.standard_normal)
    circulation = S0 - S0.T
    # shift crosses zero at reynolds = 50; beyond that a few modes go unstable
    mu = 0.02 * (spec.reynolds - 50.0)
    A = sp.csr_matrix(-damping + circulation + mu * sp.identity(n))

    n_terms = 4 * n
    vals = (0.3 / np.sqrt(n)) * rng.standard_normal(n_terms)
    N = BilinearOperator(
        n,
        rng.integers(0, n, n_terms),
        rng.integers(0, n, n_terms),
        rng.integers(0, n, n_terms),
        vals,
    )
    # ||N(v,w)|| <= ||U||_2 ||v|| ||w|| <= ||U||_F ||v|| ||w|| for the
    # n x n^2 unfolding U, hence a Lipschitz bound for v -> N_lambda(v)
    lipschitz = float(np.sqrt((N.unfolding().power(2)).sum()))

    B = rng.standard_normal((n, n_inputs))
    C = rng.standard_normal((n_outputs, n))

    J = None
    if n_constraints:
        J = rng.standard_normal((n_constraints, n))
        if np.linalg.matrix_rank(J) < n_constraints:
            raise ValueError("constraint matrix came out rank deficient")
        J = sp.csr_matrix(J)

    meta = {
        "kind": "synthetic",
        "seed": spec.seed,
        "shift": mu,
        "lipschitz_bound": lipschitz,
    }
    return QuadraticSystem(M=sp.identity(n, format="csr"), A=A, N=N, B=B, C=C,
                           J=J, meta=meta)
