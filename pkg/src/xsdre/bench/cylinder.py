"""2D channel flow past a masked square obstacle, MAC staggered grid.

Periodic in x, no-slip walls at y = 0 and y = 1, obstacle cells removed from
the state (velocities on faces touching solid cells are identically zero).
The flow is driven by a fringe region at the downstream end of the box: a
smooth relaxation term that damps the wake out and restores a plug inflow
profile before the flow re-enters at the periodic seam.  This stands in for
inflow/outflow boundary conditions; a uniformly body-forced periodic channel
re-ingests its own wake and stays stable far past physical onset.  Above a
critical Reynolds parameter (between 420 and 480 at resolution 96 x 24) the
steady wake sheds, the regime the feedback study targets.

Conventions: velocity unknowns carry the cell measure dx*dy, so M is a
multiple of the identity and J is the flux-form divergence (entries +-dy and
+-dx) with one pressure cell pinned.  Convection is in advective form with
central differences; transverse velocities are averaged onto the face where
they are needed.
"""

from __future__ import annotations

from collections import deque

import numpy as np
import scipy.sparse as sp

from ..model import BilinearOperator, QuadraticSystem
from . import BenchmarkSpec, _check_cap

ASPECT = 4.0            # channel length over height
OBSTACLE_SIDE = 0.25    # square side over channel height
OBSTACLE_CENTER = (1.0, 0.5)
DEFAULT_SENSOR_OFFSETS = (0.5, 1.0, 1.5)  # wake distances behind the obstacle
FRINGE_START = 3.0      # fringe region occupies x in [FRINGE_START, ASPECT)
FRINGE_STRENGTH = 8.0   # peak relaxation rate; 1/8 time unit at full strength
INFLOW_DELTA = 0.12     # wall-layer thickness of the plug target profile


class GridError(ValueError):
    """Obstacle and grid are incompatible (resolution, placement, topology)."""


def _fluid_mask(nx, ny, dx, dy):
    cx, cy = OBSTACLE_CENTER
    half = OBSTACLE_SIDE / 2.0
    xc = (np.arange(nx) + 0.5) * dx
    yc = (np.arange(ny) + 0.5) * dy
    solid = (np.abs(xc - cx) < half)[:, None] & (np.abs(yc - cy) < half)[None, :]
    if not solid.any():
        raise GridError("obstacle is not resolved by the grid")
    if solid[:, 0].any() or solid[:, -1].any():
        raise GridError("obstacle touches a channel wall")
    if solid[0, :].any() or solid[-1, :].any():
        raise GridError("obstacle crosses the periodic seam")
    fluid = ~solid
    # obstacle must not disconnect the fluid region
    start = (0, 0)
    seen = np.zeros_like(fluid)
    seen[start] = True
    queue = deque([start])
    while queue:
        i, j = queue.popleft()
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ii, jj = (i + di) % nx, j + dj
            if 0 <= jj < ny and fluid[ii, jj] and not seen[ii, jj]:
                seen[ii, jj] = True
                queue.append((ii, jj))
    if seen.sum() != fluid.sum():
        raise GridError("obstacle disconnects the fluid region")
    return fluid


def make_cylinder_fd(spec: BenchmarkSpec, inflow_speed: float = 1.0
                     ) -> QuadraticSystem:
    """Constrained quadratic system for the obstacle channel.

    Default actuation: two vertical-force jets one cell off the obstacle's
    rear top and rear bottom corners (penalty analog of periphery inlets).
    Default sensing: averaged u and v over 3x3 face stencils at three wake
    points behind the obstacle on the centerline, q = 6.  ``inflow_speed``
    scales the plug profile the fringe relaxes to; zero gives an unforced
    system whose steady state is v = 0.
    """
    if len(spec.resolution) != 2:
        raise GridError("cylinder_fd needs a 2D resolution (nx, ny)")
    nx, ny = spec.resolution
    dx, dy = ASPECT / nx, 1.0 / ny
    nu = 1.0 / spec.reynolds
    m = dx * dy

    fluid = _fluid_mask(nx, ny, dx, dy)
    sol_i, sol_j = np.where(~fluid)
    i0, i1 = int(sol_i.min()), int(sol_i.max())
    j0, j1 = int(sol_j.min()), int(sol_j.max())

    u_ok = fluid & np.roll(fluid, 1, axis=0)
    v_ok = fluid[:, :-1] & fluid[:, 1:]
    n_u = int(u_ok.sum())
    n_v = int(v_ok.sum())
    n = n_u + n_v
    _check_cap(n)
    if n < 500:
        raise GridError(f"state dimension {n} too coarse for a wake study")

    iu = np.full((nx, ny), -1, dtype=int)
    iu[u_ok] = np.arange(n_u)
    iv = np.full((nx, ny - 1), -1, dtype=int)
    iv[v_ok] = n_u + np.arange(n_v)

    def u_at(i, j):
        return -1 if not 0 <= j < ny else iu[i % nx, j]

    def v_at(i, j):
        return -1 if not 0 <= j < ny - 1 else iv[i % nx, j]

    def fringe_rate(x):
        s = (x - FRINGE_START) / (ASPECT - FRINGE_START)
        s = min(max(s, 0.0), 1.0)
        return FRINGE_STRENGTH * s * s * (3.0 - 2.0 * s)

    # --- viscous part plus fringe relaxation --------------------------------
    cxx, cyy = nu * m / dx**2, nu * m / dy**2
    ar, ac, av = [], [], []
    for i, j in zip(*np.where(u_ok)):
        k = iu[i, j]
        diag = -2.0 * (cxx + cyy) - m * fringe_rate(i * dx)
        for di in (1, -1):
            kn = u_at(i + di, j)
            if kn >= 0:
                ar.append(k); ac.append(kn); av.append(cxx)
        for dj in (1, -1):
            jn = j + dj
            if 0 <= jn < ny:
                kn = iu[i, jn]
                if kn >= 0:
                    ar.append(k); ac.append(kn); av.append(cyy)
                # solid neighbor: value 0, half-cell no-slip
            else:
                diag -= cyy  # wall ghost u = -u
        ar.append(k); ac.append(k); av.append(diag)
    for i, j in zip(*np.where(v_ok)):
        k = iv[i, j]
        for di in (1, -1):
            kn = v_at(i + di, j)
            if kn >= 0:
                ar.append(k); ac.append(kn); av.append(cxx)
        for dj in (1, -1):
            kn = v_at(i, j + dj)
            if kn >= 0:
                ar.append(k); ac.append(kn); av.append(cyy)
            # wall faces carry v = 0 exactly; solid faces likewise
        diag = -2.0 * (cxx + cyy) - m * fringe_rate((i + 0.5) * dx)
        ar.append(k); ac.append(k); av.append(diag)
    A = sp.csr_matrix((av, (ar, ac)), shape=(n, n))

    # --- convection, advective form ----------------------------------------
    nr, nl, nc, nv = [], [], [], []

    def term(row, left, right, val):
        nr.append(row); nl.append(left); nc.append(right); nv.append(val)

    for i, j in zip(*np.where(u_ok)):
        k = iu[i, j]
        # -m * u du/dx, central
        for di, s in ((1, -1.0), (-1, 1.0)):
            kn = u_at(i + di, j)
            if kn >= 0:
                term(k, k, kn, s * m / (2 * dx))
        # -m * vbar du/dy; vbar averages the four surrounding v-faces
        vs = [v_at(i - 1, j), v_at(i, j), v_at(i - 1, j - 1), v_at(i, j - 1)]
        for kv in vs:
            if kv < 0:
                continue
            for dj, s in ((1, -1.0), (-1, 1.0)):
                jn = j + dj
                if 0 <= jn < ny:
                    kn = iu[i, jn]
                    if kn >= 0:
                        term(k, kv, kn, s * m / (8 * dy))
                else:
                    term(k, kv, k, -s * m / (8 * dy))  # ghost u = -u
    for i, j in zip(*np.where(v_ok)):
        k = iv[i, j]
        # -m * v dv/dy, central; wall and solid faces hold v = 0
        for dj, s in ((1, -1.0), (-1, 1.0)):
            kn = v_at(i, j + dj)
            if kn >= 0:
                term(k, k, kn, s * m / (2 * dy))
        # -m * ubar dv/dx
        us = [u_at(i, j), u_at(i + 1, j), u_at(i, j + 1), u_at(i + 1, j + 1)]
        for ku in us:
            if ku < 0:
                continue
            for di, s in ((1, -1.0), (-1, 1.0)):
                kn = v_at(i + di, j)
                if kn >= 0:
                    term(k, ku, kn, s * m / (8 * dx))
    N = BilinearOperator(n, nr, nl, nc, nv)

    # --- divergence constraint, one pressure cell pinned --------------------
    jr, jc, jv = [], [], []
    cells = list(zip(*np.where(fluid)))
    for row, (i, j) in enumerate(cells[:-1]):
        for kf, w in ((iu[(i + 1) % nx, j], dy), (iu[i, j], -dy)):
            if kf >= 0:
                jr.append(row); jc.append(kf); jv.append(w)
        for kf, w in ((v_at(i, j), dx), (v_at(i, j - 1), -dx)):
            if kf >= 0:
                jr.append(row); jc.append(kf); jv.append(w)
    J = sp.csr_matrix((jv, (jr, jc)), shape=(len(cells) - 1, n))

    # --- fringe forcing, actuators, sensors ----------------------------------
    f = None
    if inflow_speed != 0.0:
        f = np.zeros(n)
        for i, j in zip(*np.where(u_ok)):
            rate = fringe_rate(i * dx)
            if rate > 0.0:
                y = (j + 0.5) * dy
                target = np.tanh(y / INFLOW_DELTA) * np.tanh((1.0 - y) / INFLOW_DELTA)
                f[iu[i, j]] = rate * m * inflow_speed * target

    if spec.actuators:
        act_faces = spec.actuators  # explicit ((i, j), ...) v-face groups
    else:
        cols = range(max(i0 + (2 * (i1 - i0 + 1)) // 3, i0), i1 + 1)
        act_faces = (
            tuple((i, j1 + 1) for i in cols),
            tuple((i, j0 - 2) for i in cols),
        )
    B = np.zeros((n, len(act_faces)))
    for col, faces in enumerate(act_faces):
        for (i, j) in faces:
            kv = v_at(i, j)
            if kv < 0:
                raise GridError(f"actuator face ({i}, {j}) is not a fluid v-face")
            B[kv, col] = m
    if not np.all(B.any(axis=0)):
        raise GridError("an actuator has no fluid faces")

    offsets = spec.sensors or DEFAULT_SENSOR_OFFSETS
    cx, cy = OBSTACLE_CENTER
    x_rear = cx + OBSTACLE_SIDE / 2.0
    C = np.zeros((2 * len(offsets), n))
    sensor_points = []
    for s, off in enumerate(offsets):
        px = x_rear + float(off)
        if not px < ASPECT - 2 * dx:
            raise GridError(f"sensor offset {off} leaves the channel")
        sensor_points.append((px, cy))
        ic = int(round(px / dx))
        jc_u = int(round(cy / dy - 0.5))
        got = 0
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                ku = u_at(ic + di, jc_u + dj)
                if ku >= 0:
                    C[2 * s, ku] = 1.0 / 9.0
                    got += 1
        ic_v = int(round(px / dx - 0.5))
        jc_v = int(round(cy / dy - 1.0))
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                kv = v_at(ic_v + di, jc_v + dj)
                if kv >= 0:
                    C[2 * s + 1, kv] = 1.0 / 9.0
                    got += 1
        if got < 18:
            raise GridError(f"sensor stencil at offset {off} hits solid cells")

    meta = {
        "kind": "cylinder_fd", "nu": nu, "dx": dx, "dy": dy, "nx": nx, "ny": ny,
        "n_u": n_u, "n_v": n_v, "obstacle_cells": (i0, i1, j0, j1),
        "u_map": iu, "v_map": iv, "sensor_points": tuple(sensor_points),
        "inflow_speed": float(inflow_speed), "fringe_start": FRINGE_START,
        "fringe_strength": FRINGE_STRENGTH, "seed": spec.seed,
    }
    M = sp.identity(n, format="csr") * m
    return QuadraticSystem(M=M, A=A, N=N, B=B, C=C, J=J, f=f, meta=meta)
