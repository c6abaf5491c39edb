"""Quadratic input-affine systems and their affine-LPV approximations.

A system is

    M dv/dt = N(v, v) + A v + B u (+ J^T p + f),   y = C v,   (J v = g)

with a symmetric positive definite mass matrix ``M``, a bilinear convection
term ``N``, and an optional algebraic constraint ``J``.  The bilinear term
admits state-dependent coefficient matrices ``N1(v) w = N(v, w)`` and
``N2(v) w = N(w, v)``, blended into ``N_lam(v) = lam*N1(v) + (1-lam)*N2(v)``
which satisfies ``N_lam(v) v = N(v, v)`` for every blending parameter.

Scheduling a low-rank reconstruction of the state through ``N_lam`` yields an
affine parameter-varying coefficient: since ``v -> N_lam(v)`` is linear, the
coefficient for the reconstruction ``sum_k rho_k vhat_k`` is
``sum_k rho_k N_lam(vhat_k)`` with constant, precomputable matrices.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SpdCheckError(ValueError):
    """Mass matrix failed the symmetry / positive-definiteness check."""


def _as_csr(mat):
    return sp.csr_matrix(mat)


def _check_spd(M: sp.spmatrix, dense_limit: int = 4000) -> None:
    """Verify that M is symmetric and positive definite.

    Symmetry is checked entrywise; definiteness by an attempted Cholesky
    factorization.  Diagonal matrices are checked directly; moderate sizes
    use a dense factorization; beyond that a random quadratic-form probe
    backs up a sparse LU attempt.
    """
    n = M.shape[0]
    asym = abs(M - M.T)
    scale = max(abs(M).max(), 1e-300)
    if asym.nnz and asym.max() > 50 * np.finfo(float).eps * scale:
        raise SpdCheckError("mass matrix is not symmetric to machine precision")
    offdiag = M - sp.diags(M.diagonal())
    if offdiag.nnz == 0:
        if np.any(M.diagonal() <= 0):
            raise SpdCheckError("diagonal mass matrix has non-positive entries")
        return
    if n <= dense_limit:
        try:
            np.linalg.cholesky(M.toarray())
        except np.linalg.LinAlgError as exc:
            raise SpdCheckError("mass matrix is not positive definite") from exc
        return
    try:
        spla.splu(sp.csc_matrix(M))
    except RuntimeError as exc:
        raise SpdCheckError("mass matrix is singular") from exc
    rng = np.random.default_rng(0)
    X = rng.standard_normal((n, 8))
    if np.any(np.einsum("ij,ij->j", X, M @ X) <= 0):
        raise SpdCheckError("mass matrix failed positive-definiteness probe")


class BilinearOperator:
    """A bilinear map N: R^n x R^n -> R^n stored as sparse third-order entries.

    Internally a COO-style list ``(row, left, right, value)`` meaning
    ``N(v, w)[row] += value * v[left] * w[right]``, equivalent to a sparse
    mode-1 unfolding of size n x n^2.  Both coefficient extractions are
    O(nnz).
    """

    def __init__(self, n: int, rows, left, right, vals):
        self.n = int(n)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.vals = np.asarray(vals, dtype=np.float64)
        if not (self.rows.shape == self.left.shape == self.right.shape == self.vals.shape):
            raise ValueError("entry arrays must have identical shapes")
        for idx in (self.rows, self.left, self.right):
            if idx.size and (idx.min() < 0 or idx.max() >= self.n):
                raise ValueError("entry index out of range")

    @classmethod
    def zero(cls, n: int) -> "BilinearOperator":
        e = np.empty(0)
        return cls(n, e, e, e, e)

    @classmethod
    def from_unfolding(cls, unfolding: sp.spmatrix) -> "BilinearOperator":
        """Build from the n x n^2 mode-1 unfolding, column index = left*n + right."""
        U = sp.coo_matrix(unfolding)
        n = U.shape[0]
        if U.shape[1] != n * n:
            raise ValueError(f"unfolding must be n x n^2, got {U.shape}")
        return cls(n, U.row, U.col // n, U.col % n, U.data)

    def unfolding(self) -> sp.csr_matrix:
        """Return the sparse mode-1 unfolding (n x n^2)."""
        cols = self.left * self.n + self.right
        return sp.csr_matrix(
            (self.vals, (self.rows, cols)), shape=(self.n, self.n * self.n)
        )

    @property
    def nnz(self) -> int:
        return self.vals.size

    def apply(self, v, w) -> np.ndarray:
        """Evaluate N(v, w)."""
        v = np.asarray(v)
        w = np.asarray(w)
        if v.shape != (self.n,) or w.shape != (self.n,):
            raise ValueError("argument dimension mismatch")
        if self.vals.size == 0:
            return np.zeros(self.n)
        return np.bincount(
            self.rows,
            weights=self.vals * v[self.left] * w[self.right],
            minlength=self.n,
        )

    def __call__(self, v, w) -> np.ndarray:
        return self.apply(v, w)

    def fix_first(self, v) -> sp.csr_matrix:
        """Coefficient matrix N1(v) with N1(v) w = N(v, w)."""
        v = np.asarray(v)
        if v.shape != (self.n,):
            raise ValueError("argument dimension mismatch")
        return sp.csr_matrix(
            (self.vals * v[self.left], (self.rows, self.right)),
            shape=(self.n, self.n),
        )

    def fix_second(self, w) -> sp.csr_matrix:
        """Coefficient matrix N2(w) with N2(w) v = N(v, w)."""
        w = np.asarray(w)
        if w.shape != (self.n,):
            raise ValueError("argument dimension mismatch")
        return sp.csr_matrix(
            (self.vals * w[self.right], (self.rows, self.left)),
            shape=(self.n, self.n),
        )


@dataclass(frozen=True, eq=False)
class QuadraticSystem:
    """Quadratic input-affine system, optionally constrained (DAE form).

    Immutable after construction.  ``f`` is a constant forcing term and ``g``
    constraint data; both are None for systems already shifted so that the
    origin is the steady state.
    """

    M: sp.spmatrix
    A: sp.spmatrix
    N: BilinearOperator
    B: np.ndarray
    C: np.ndarray
    J: sp.spmatrix | None = None
    f: np.ndarray | None = None
    g: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.M.shape[0]
        object.__setattr__(self, "M", _as_csr(self.M))
        object.__setattr__(self, "A", _as_csr(self.A))
        object.__setattr__(self, "B", np.atleast_2d(np.asarray(self.B, dtype=float)))
        object.__setattr__(self, "C", np.atleast_2d(np.asarray(self.C, dtype=float)))
        if self.M.shape != (n, n) or self.A.shape != (n, n):
            raise ValueError("M and A must be square of equal size")
        if self.N.n != n:
            raise ValueError("bilinear term dimension mismatch")
        if self.B.shape[0] != n or self.B.shape[1] < 1:
            raise ValueError(f"B must be n x p with p >= 1, got {self.B.shape}")
        if self.C.shape[1] != n or self.C.shape[0] < 1:
            raise ValueError(f"C must be q x n with q >= 1, got {self.C.shape}")
        _check_spd(self.M)
        if self.J is not None:
            object.__setattr__(self, "J", _as_csr(self.J))
            if self.J.shape[1] != n:
                raise ValueError("J column count must equal the state dimension")
        if self.f is not None:
            fvec = np.asarray(self.f, dtype=float)
            if fvec.shape != (n,):
                raise ValueError("forcing vector dimension mismatch")
            object.__setattr__(self, "f", fvec)
        if self.g is not None:
            if self.J is None:
                raise ValueError("constraint data g given without J")
            gvec = np.asarray(self.g, dtype=float)
            if gvec.shape != (self.J.shape[0],):
                raise ValueError("constraint data dimension mismatch")
            object.__setattr__(self, "g", gvec)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def n_p(self) -> int:
        return 0 if self.J is None else self.J.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def q(self) -> int:
        return self.C.shape[0]


def sdc_coefficient(sys: QuadraticSystem, v, lam: float) -> sp.csr_matrix:
    """Blended state-dependent coefficient N_lam(v) = lam*N1(v) + (1-lam)*N2(v).

    Satisfies N_lam(v) v = N(v, v) for every lam; lam outside [0, 1] is
    permitted but warned about.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (sys.n,):
        raise ValueError(f"state dimension {v.shape} does not match n={sys.n}")
    if not np.all(np.isfinite(v)):
        raise ValueError("state vector must be finite")
    if not 0.0 <= lam <= 1.0:
        warnings.warn(f"blending parameter lam={lam} outside [0, 1]", stacklevel=2)
    return lam * sys.N.fix_first(v) + (1.0 - lam) * sys.N.fix_second(v)


def rhs(sys: QuadraticSystem, v, u) -> np.ndarray:
    """Evaluate N(v, v) + A v + B u (+ f), the velocity-equation right-hand side."""
    v = np.asarray(v, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if v.shape != (sys.n,):
        raise ValueError("state dimension mismatch")
    if u.shape != (sys.p,):
        raise ValueError("input dimension mismatch")
    out = sys.N.apply(v, v) + sys.A @ v + sys.B @ u
    if sys.f is not None:
        out = out + sys.f
    return out


class AffineLpvModel:
    """Affine parameter-varying coefficient A(rho) = A0 + sum_k rho_k * Ak.

    The scheduling map is the encoder of a POD basis; by construction the
    evaluated coefficient applied to a state v reproduces
    ``A v + N_lam(vtilde) v`` where vtilde is the basis reconstruction of v.
    """

    def __init__(self, A0: sp.spmatrix, coeffs, basis, lam: float):
        self.A0 = _as_csr(A0)
        self.coeffs = [_as_csr(c) for c in coeffs]
        self.basis = basis
        self.lam = float(lam)
        n = self.A0.shape[0]
        for k, c in enumerate(self.coeffs):
            if c.shape != (n, n):
                raise ValueError(f"coefficient {k} has shape {c.shape}, expected {(n, n)}")

    @property
    def n(self) -> int:
        return self.A0.shape[0]

    @property
    def r(self) -> int:
        return len(self.coeffs)

    def scheduling(self, v) -> np.ndarray:
        """Parameter vector rho_hat for a state v (POD encoding)."""
        return self.basis.encode(v)

    def coefficient(self, rho_hat) -> sp.csr_matrix:
        """Assembled coefficient A0 + sum_k rho_k * Ak."""
        rho_hat = np.asarray(rho_hat, dtype=float)
        if rho_hat.shape != (self.r,):
            raise ValueError("parameter dimension mismatch")
        out = self.A0.copy()
        for rk, Ak in zip(rho_hat, self.coeffs):
            out = out + rk * Ak
        return _as_csr(out)

    def apply(self, rho_hat, v) -> np.ndarray:
        """Evaluate A(rho_hat) v without assembling the coefficient."""
        rho_hat = np.asarray(rho_hat, dtype=float)
        if rho_hat.shape != (self.r,):
            raise ValueError("parameter dimension mismatch")
        out = self.A0 @ v
        for rk, Ak in zip(rho_hat, self.coeffs):
            out += rk * (Ak @ v)
        return out


def build_affine_lpv(sys: QuadraticSystem, basis, lam: float) -> AffineLpvModel:
    """Affine-LPV approximation with coefficients N_lam at the basis modes."""
    if basis.V.shape[0] != sys.n:
        raise ValueError("basis / system dimension mismatch")
    coeffs = [sdc_coefficient(sys, basis.V[:, k], lam) for k in range(basis.r)]
    return AffineLpvModel(sys.A, coeffs, basis, lam)


# -- matrix-market import/export ---------------------------------------------

_SYS_FIELDS = ("M", "A", "B", "C", "J", "N")


def save_system(sys: QuadraticSystem, directory) -> None:
    """Export a system as matrix-market files plus a small JSON manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    scipy.io.mmwrite(d / "M.mtx", sys.M)
    scipy.io.mmwrite(d / "A.mtx", sys.A)
    scipy.io.mmwrite(d / "B.mtx", np.asarray(sys.B))
    scipy.io.mmwrite(d / "C.mtx", np.asarray(sys.C))
    scipy.io.mmwrite(d / "N.mtx", sys.N.unfolding())
    manifest = {"n": sys.n, "has_J": sys.J is not None,
                "has_f": sys.f is not None, "has_g": sys.g is not None}
    if sys.J is not None:
        scipy.io.mmwrite(d / "J.mtx", sys.J)
    if sys.f is not None:
        scipy.io.mmwrite(d / "f.mtx", sys.f.reshape(-1, 1))
    if sys.g is not None:
        scipy.io.mmwrite(d / "g.mtx", sys.g.reshape(-1, 1))
    (d / "system.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_system(directory) -> QuadraticSystem:
    """Import a system written by :func:`save_system`."""
    d = Path(directory)
    manifest = json.loads((d / "system.json").read_text())
    read = scipy.io.mmread
    J = _as_csr(read(d / "J.mtx")) if manifest["has_J"] else None
    f = np.asarray(read(d / "f.mtx")).ravel() if manifest["has_f"] else None
    g = np.asarray(read(d / "g.mtx")).ravel() if manifest["has_g"] else None
    return QuadraticSystem(
        M=_as_csr(read(d / "M.mtx")),
        A=_as_csr(read(d / "A.mtx")),
        N=BilinearOperator.from_unfolding(_as_csr(read(d / "N.mtx"))),
        B=np.asarray(read(d / "B.mtx")),
        C=np.asarray(read(d / "C.mtx")),
        J=J, f=f, g=g,
    )
