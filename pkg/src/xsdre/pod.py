"""Proper orthogonal decomposition in the inner product of a mass matrix.

Given snapshots X (columns are states) and SPD mass matrix M = F F^T, the
M-weighted POD of X is obtained from the ordinary SVD of F^T X: with
F^T X = U S W^T the modes are V = F^{-T} U, which are M-orthonormal
(V^T M V = I).  Working through the Cholesky factor rather than the
eigendecomposition of X^T M X keeps the modes orthonormal to machine
precision even for rapidly decaying spectra.

The truncation error in the M-weighted Frobenius norm equals the tail of the
singular values exactly:

    || X - V_r V_r^T M X ||_{M,F} = sqrt(sum_{i>r} sigma_i^2).
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .arrayio import load_array, save_array, save_csv


class _DiagFactor:
    """Cholesky factor of a diagonal M: F = diag(sqrt(m))."""

    def __init__(self, d):
        if np.any(d <= 0):
            raise ValueError("mass matrix diagonal must be positive")
        self.s = np.sqrt(d)

    def t_apply(self, X):          # F^T X
        return self.s[:, None] * X

    def t_solve(self, X):          # F^{-T} X
        return X / self.s[:, None]


class _DenseFactor:
    """Lower Cholesky factor of a general SPD M (densified)."""

    def __init__(self, M):
        self.L = np.linalg.cholesky(M.toarray() if sp.issparse(M) else np.asarray(M))

    def t_apply(self, X):
        return self.L.T @ X

    def t_solve(self, X):
        return scipy.linalg.solve_triangular(self.L, X, trans="T", lower=True)


def _mass_factor(M):
    M = sp.csr_matrix(M)
    if (M - sp.diags(M.diagonal())).nnz == 0:
        return _DiagFactor(M.diagonal())
    return _DenseFactor(M)


class SnapshotSet:
    """Snapshot matrix with its inner-product weight.

    Columns of X are states; ``times`` is optional bookkeeping.
    """

    def __init__(self, X, M, times=None):
        self.X = np.ascontiguousarray(X, dtype=float)
        if self.X.ndim != 2:
            raise ValueError("snapshot matrix must be 2-D (states as columns)")
        self.M = sp.csr_matrix(M)
        if self.M.shape != (self.X.shape[0], self.X.shape[0]):
            raise ValueError("mass matrix size does not match snapshot dimension")
        self.times = None if times is None else np.asarray(times, dtype=float)
        if self.times is not None and self.times.shape != (self.X.shape[1],):
            raise ValueError("one time per snapshot column required")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def n_snapshots(self):
        return self.X.shape[1]


class PodBasis:
    """Truncated M-orthonormal basis with its full singular-value ladder.

    ``sigma`` keeps all computed singular values (not just the leading r) so
    truncation errors of any order are available after the fact.  The encoder
    weight E = (M V)^T is precomputed; encode(v) = V^T M v, decode = V rho.
    """

    def __init__(self, V, sigma, M):
        self.V = np.ascontiguousarray(V, dtype=float)
        self.sigma = np.asarray(sigma, dtype=float)
        self.M = sp.csr_matrix(M)
        if self.V.ndim != 2:
            raise ValueError("mode matrix must be 2-D")
        if self.sigma.size < self.V.shape[1]:
            raise ValueError("need at least one singular value per kept mode")
        self._E = (self.M @ self.V).T.copy()

    @property
    def n(self):
        return self.V.shape[0]

    @property
    def r(self):
        return self.V.shape[1]

    def encode(self, v) -> np.ndarray:
        """Coefficients rho = V^T M v of the M-orthogonal projection."""
        return self._E @ np.asarray(v)

    def decode(self, rho) -> np.ndarray:
        """Reconstruction V rho."""
        return self.V @ np.asarray(rho)

    def project(self, v) -> np.ndarray:
        return self.decode(self.encode(v))

    def truncated(self, r: int) -> "PodBasis":
        """Basis with only the leading r modes (no recompute)."""
        if not 1 <= r <= self.r:
            raise ValueError(f"truncation order must be in [1, {self.r}]")
        return PodBasis(self.V[:, :r], self.sigma, self.M)

    def tail_energy(self, r: int | None = None) -> float:
        """sqrt(sum_{i>r} sigma_i^2): exact M-Frobenius truncation error."""
        if r is None:
            r = self.r
        return float(np.sqrt(np.sum(self.sigma[r:] ** 2)))

    def orthonormality_defect(self) -> float:
        return float(np.max(np.abs(self.V.T @ (self.M @ self.V) - np.eye(self.r))))


def compute_pod(snapshots: SnapshotSet, r: int, rank_rtol: float = None) -> PodBasis:
    """Leading r M-orthonormal POD modes of a snapshot set.

    If the requested order exceeds the numerical rank of the snapshot matrix,
    the basis is shrunk to the rank and a warning records that.  Mode signs
    are fixed so the largest-magnitude entry of each mode is positive.
    """
    if r < 1:
        raise ValueError("requested order must be positive")
    F = _mass_factor(snapshots.M)
    U, s, _ = np.linalg.svd(F.t_apply(snapshots.X), full_matrices=False)
    if rank_rtol is None:
        rank_rtol = max(snapshots.n, snapshots.n_snapshots) * np.finfo(float).eps
    rank = int(np.sum(s > rank_rtol * s[0])) if s.size and s[0] > 0 else 0
    if rank == 0:
        raise ValueError("snapshot matrix is numerically zero")
    if r > rank:
        warnings.warn(
            f"requested {r} modes but snapshots have numerical rank {rank}; "
            f"shrinking basis to {rank}",
            stacklevel=2,
        )
        r = rank
    V = F.t_solve(U[:, :r])
    # sign convention: largest-magnitude entry of each mode positive
    pick = np.argmax(np.abs(V), axis=0)
    V *= np.where(V[pick, np.arange(r)] < 0, -1.0, 1.0)
    return PodBasis(V, s, snapshots.M)


def projection_error(basis: PodBasis, X) -> float:
    """Measured M-Frobenius norm of X - V V^T M X (for cross-checks)."""
    E = np.asarray(X) - basis.V @ (basis._E @ X)
    return float(np.sqrt(np.sum(E * (basis.M @ E))))


# -- serialization -------------------------------------------------------------

def save_basis(basis: PodBasis, directory) -> None:
    """Binary modes + mass matrix, singular values also as CSV."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_array(d / "modes.xarr", basis.V)
    save_array(d / "sigma.xarr", basis.sigma)
    Mcoo = sp.coo_matrix(basis.M)
    save_array(d / "mass_row.xarr", Mcoo.row.astype(np.int64))
    save_array(d / "mass_col.xarr", Mcoo.col.astype(np.int64))
    save_array(d / "mass_val.xarr", Mcoo.data.astype(np.float64))
    save_csv(
        d / "singular_values.csv",
        {"index": np.arange(1, basis.sigma.size + 1), "sigma": basis.sigma},
    )


def load_basis(directory) -> PodBasis:
    d = Path(directory)
    V = load_array(d / "modes.xarr")
    sigma = load_array(d / "sigma.xarr")
    row = load_array(d / "mass_row.xarr")
    col = load_array(d / "mass_col.xarr")
    val = load_array(d / "mass_val.xarr")
    n = V.shape[0]
    M = sp.csr_matrix((val, (row, col)), shape=(n, n))
    return PodBasis(V, sigma, M)
