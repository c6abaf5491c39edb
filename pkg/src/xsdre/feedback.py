"""Truncated-SDRE state feedback assembled from precomputed factors.

The control law is

    u(v) = -(1/alpha) * B^T (P0 + sum_k rho_k(v) L_k) M v,
    rho(v) = basis encoding V^T M v,

where P0 and the L_k come from the regularized matrix-equation solves (input
matrix B/sqrt(alpha)).  With r = 0 the law is exactly the regularized LQR
feedback.  Gains are flattened to dense p x n rows once at assembly, so one
evaluation costs r encodings plus r+1 small matrix-vector products; the n x n
solution matrices are never formed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .arrayio import load_array, save_array, save_csv
from .mateq.common import LowRankIndef, LowRankPsd


class FeedbackGains:
    """Dense gain rows K0 = B^T P0 M and Ks[k] = B^T L_k M."""

    def __init__(self, K0, Ks):
        self.K0 = np.atleast_2d(np.asarray(K0, dtype=float))
        self.Ks = [np.atleast_2d(np.asarray(K, dtype=float)) for K in Ks]
        for K in self.Ks:
            if K.shape != self.K0.shape:
                raise ValueError("all gain blocks must share the shape of K0")
        if not np.all(np.isfinite(self.K0)) or not all(
            np.all(np.isfinite(K)) for K in self.Ks
        ):
            raise ValueError("gains contain non-finite entries")

    @property
    def p(self):
        return self.K0.shape[0]

    @property
    def n(self):
        return self.K0.shape[1]

    @property
    def r(self):
        return len(self.Ks)


def _gain_from_factor(B, fac, M):
    """B^T X M through the factors, never forming X."""
    if isinstance(fac, LowRankPsd):
        return (B.T @ fac.Z) @ (fac.Z.T @ M)
    if isinstance(fac, LowRankIndef):
        return (B.T @ fac.Z) @ fac.D @ (fac.Z.T @ M)
    X = fac.toarray() if sp.issparse(fac) else np.asarray(fac, dtype=float)
    return B.T @ (X @ M)


class SdreExpansion:
    """First-order expansion of the state-dependent Riccati solution.

    Holds the solution factors, the scheduling basis, and the regularization
    weight; immutable after assembly.  ``gains`` carries the precomputed
    feedback rows.
    """

    def __init__(self, P0, Ls, basis, B, M, alpha, gains: FeedbackGains):
        self.P0 = P0
        self.Ls = list(Ls)
        self.basis = basis
        self.B = B
        self.M = M
        self.alpha = float(alpha)
        self.gains = gains

    @property
    def r(self):
        return len(self.Ls)

    @property
    def p(self):
        return self.gains.p

    @property
    def n(self):
        return self.gains.n

    def truncated(self, r: int) -> "SdreExpansion":
        """Expansion using only the leading r scheduling directions."""
        if not 0 <= r <= self.r:
            raise ValueError(f"truncation order must be in [0, {self.r}]")
        basis = None if r == 0 else self.basis.truncated(r)
        return SdreExpansion(
            self.P0, self.Ls[:r], basis, self.B, self.M, self.alpha,
            FeedbackGains(self.gains.K0, self.gains.Ks[:r]),
        )


def assemble(P0, Ls, basis, B, M, alpha) -> SdreExpansion:
    """Precompute feedback gains from solver outputs.

    P0 and each L_k may be low-rank factors or dense arrays; B is the
    unscaled actuator matrix, while the factors must come from solves with
    B/sqrt(alpha).  alpha is the single regularization source of truth and
    must match the value used there.
    """
    if not np.isfinite(alpha) or alpha <= 0:
        raise ValueError(f"regularization weight must be positive, got {alpha}")
    B = np.atleast_2d(np.asarray(B, dtype=float))
    M = sp.csr_matrix(M)
    n = M.shape[0]
    if B.shape[0] != n:
        raise ValueError("actuator matrix row count must equal n")
    Ls = list(Ls)
    r = len(Ls)
    if basis is None:
        if r != 0:
            raise ValueError("scheduling basis required when expansion terms given")
    else:
        if basis.r != r:
            raise ValueError(
                f"basis rank {basis.r} does not match expansion order {r}"
            )
        if basis.V.shape[0] != n:
            raise ValueError("basis / mass matrix dimension mismatch")
    K0 = _gain_from_factor(B, P0, M)
    Ks = [_gain_from_factor(B, L, M) for L in Ls]
    return SdreExpansion(P0, Ls, basis, B, M, alpha, FeedbackGains(K0, Ks))


def evaluate(exp: SdreExpansion, v, clamp: float | None = None) -> np.ndarray:
    """Feedback u(v) = -(1/alpha) (K0 + sum_k rho_k(v) Ks[k]) v.

    ``clamp`` optionally saturates each input channel at +-clamp; the default
    applies no limit.
    """
    v = np.asarray(v, dtype=float)
    u = _gain_apply(exp, v)
    if clamp is not None:
        u = np.clip(u, -clamp, clamp)
    return u


def _gain_apply(exp: SdreExpansion, v) -> np.ndarray:
    g = exp.gains
    u = g.K0 @ v
    if g.r:
        rho = exp.basis.encode(v)
        for rk, Kk in zip(rho, g.Ks):
            u += rk * (Kk @ v)
    return -u / exp.alpha


def save_gains(gains: FeedbackGains, directory) -> None:
    """Binary container plus one CSV per gain block (row-major entries)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_array(d / "K0.xarr", gains.K0)
    for k, K in enumerate(gains.Ks, start=1):
        save_array(d / f"K{k}.xarr", K)
    cols = {"input": np.repeat(np.arange(gains.p), gains.n),
            "state": np.tile(np.arange(gains.n), gains.p),
            "K0": gains.K0.ravel()}
    for k, K in enumerate(gains.Ks, start=1):
        cols[f"K{k}"] = K.ravel()
    save_csv(d / "gains.csv", cols)


def load_gains(directory) -> FeedbackGains:
    d = Path(directory)
    K0 = load_array(d / "K0.xarr")
    Ks = []
    k = 1
    while (d / f"K{k}.xarr").exists():
        Ks.append(load_array(d / f"K{k}.xarr"))
        k += 1
    return FeedbackGains(K0, Ks)
