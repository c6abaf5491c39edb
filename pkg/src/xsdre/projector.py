"""Discrete Leray projection and saddle-point solves for constrained systems.

For a constraint J v = 0 with full-row-rank J and SPD mass matrix M, the
discrete projector

    Pi = I - M^{-1} J^T (J M^{-1} J^T)^{-1} J

maps onto ker J along the M-orthogonal complement.  It is idempotent,
satisfies J Pi = 0 and Pi^T M = M Pi, and its transpose acts on dual
(residual-side) quantities.  Both actions are realized through one sparse LU
factorization of the saddle matrix [[M, J^T], [J, 0]]; the explicit Schur
complement J M^{-1} J^T is never formed, so a non-diagonal M costs nothing
extra.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class RankDeficiencyError(ValueError):
    """Constraint matrix does not have full row rank (saddle system singular)."""


def _lu_or_rank_error(K: sp.spmatrix, what: str) -> spla.SuperLU:
    try:
        return spla.splu(sp.csc_matrix(K))
    except RuntimeError as exc:
        raise RankDeficiencyError(f"{what} is singular: {exc}") from exc


class SaddleSolver:
    """Cached LU of the block system [[F, G^T], [J, 0]].

    Solves
        F x + G^T y = b
        J x         = c
    for one or many right-hand sides.  F may be complex (shifted solves);
    G defaults to J (symmetric constraint coupling).
    """

    def __init__(self, F: sp.spmatrix, J: sp.spmatrix, G: sp.spmatrix | None = None):
        if G is None:
            G = J
        self.n = F.shape[0]
        self.n_p = J.shape[0]
        if J.shape[1] != self.n or G.shape != J.shape:
            raise ValueError("constraint block shape mismatch")
        K = sp.bmat([[F, G.T.conj() if np.iscomplexobj(G.data) else G.T],
                     [J, None]], format="csc")
        self.lu = _lu_or_rank_error(K, "saddle matrix")

    def solve(self, b, c=None):
        """Return (x, y).  b is (n,) or (n, k); c defaults to zero."""
        b = np.asarray(b)
        one_d = b.ndim == 1
        b2 = b.reshape(self.n, -1)
        k = b2.shape[1]
        if c is None:
            c2 = np.zeros((self.n_p, k), dtype=b2.dtype)
        else:
            c2 = np.asarray(c).reshape(self.n_p, k)
        rhs = np.vstack([b2, c2])
        sol = self.lu.solve(rhs)
        x, y = sol[: self.n], sol[self.n:]
        if one_d:
            return x.ravel(), y.ravel()
        return x, y


def saddle_point_solve(F: sp.spmatrix, J: sp.spmatrix, b, c=None):
    """One-shot saddle solve; see :class:`SaddleSolver`."""
    return SaddleSolver(F, J).solve(b, c)


class LerayProjector:
    """Discrete projector onto ker J, M-orthogonal, via saddle factorization.

    apply(v):           Pi v      (projects states)
    apply_transpose(w): Pi^T w    (projects residuals / adjoint quantities)
    """

    def __init__(self, M: sp.spmatrix, J: sp.spmatrix):
        self.M = sp.csr_matrix(M)
        self.J = sp.csr_matrix(J)
        self.n = self.M.shape[0]
        self.n_p = self.J.shape[0]
        if self.J.shape[1] != self.n:
            raise ValueError("J column count must match M")
        self._saddle = SaddleSolver(self.M, self.J)
        # splu succeeds on some numerically rank-deficient J; probe a solve
        rng = np.random.default_rng(12345)
        b = rng.standard_normal(self.n)
        x, y = self._saddle.solve(b)
        resid = np.linalg.norm(self.M @ x + self.J.T @ y - b) + np.linalg.norm(self.J @ x)
        if not np.isfinite(resid) or resid > 1e-8 * max(np.linalg.norm(b), 1.0):
            raise RankDeficiencyError(
                "constraint matrix appears numerically rank deficient "
                f"(probe residual {resid:.2e})"
            )

    def apply(self, v) -> np.ndarray:
        """Pi v = v - M^{-1} J^T (J M^{-1} J^T)^{-1} J v."""
        v = np.asarray(v, dtype=float)
        one_d = v.ndim == 1
        x, _ = self._saddle.solve(self.M @ v.reshape(self.n, -1))
        return x.ravel() if one_d else x

    def apply_transpose(self, w) -> np.ndarray:
        """Pi^T w = w - J^T (J M^{-1} J^T)^{-1} J M^{-1} w = M (saddle x)."""
        w = np.asarray(w, dtype=float)
        one_d = w.ndim == 1
        x, _ = self._saddle.solve(w.reshape(self.n, -1))
        out = self.M @ x
        return out.ravel() if one_d else out

    def dense(self) -> np.ndarray:
        """Explicit projector matrix; for small problems and testing only."""
        return self.apply(np.eye(self.n))
