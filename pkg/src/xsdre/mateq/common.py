"""Shared options, reports, and factor types for the matrix-equation solvers."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from ..arrayio import load_array, save_array, save_csv


class SynthesisError(RuntimeError):
    """No stabilizing solution could be synthesized."""


class ConvergenceError(RuntimeError):
    """Iterative solver failed to reach the requested tolerance.

    Carries the :class:`SolverReport` accumulated so far in ``report``.
    """

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class SolverOptions:
    """Tolerances and limits shared by the low-rank solvers.

    tol is the normalized-residual target.  Problems of size at most
    dense_threshold are handled by the dense path when dispatch is automatic.
    """

    tol: float = 1e-7
    adi_max_steps: int = 300
    newton_max_steps: int = 30
    compression_tol: float = 1e-12
    compress_above: int = 600
    dense_threshold: int = 600
    shift_batch: int = 12
    inner_tol_factor: float = 0.1

    def inner_tol(self) -> float:
        return max(self.tol * self.inner_tol_factor, 1e-13)


@dataclass
class SolverReport:
    """Iteration record of a low-rank solve.

    ``residuals`` is normalized; for Newton runs it holds the outer (Riccati)
    residuals, nonincreasing once the Newton phase is entered.  ``shifts`` and
    ``ranks`` record the ADI shift sequence and factor width per step.
    """

    converged: bool = False
    iterations: int = 0
    residual: float = np.inf
    residuals: list = field(default_factory=list)
    shifts: list = field(default_factory=list)
    ranks: list = field(default_factory=list)
    method: str = ""

    def to_csv(self, path) -> None:
        n = max(len(self.residuals), len(self.shifts), len(self.ranks), 1)

        def pad(xs, fill):
            return list(xs) + [fill] * (n - len(xs))

        save_csv(
            Path(path),
            {
                "step": np.arange(1, n + 1),
                "residual": np.asarray(pad(self.residuals, np.nan), dtype=float),
                "shift_re": np.asarray(
                    [np.real(s) for s in pad(self.shifts, np.nan)], dtype=float
                ),
                "shift_im": np.asarray(
                    [np.imag(s) for s in pad(self.shifts, np.nan)], dtype=float
                ),
                "rank": np.asarray(pad(self.ranks, -1), dtype=int),
            },
        )


class LowRankPsd:
    """Positive semidefinite matrix in factored form X = Z Z^T."""

    def __init__(self, Z):
        self.Z = np.ascontiguousarray(Z, dtype=float)
        if self.Z.ndim != 2:
            raise ValueError("factor must be 2-D")

    @property
    def n(self):
        return self.Z.shape[0]

    @property
    def rank(self):
        return self.Z.shape[1]

    def to_dense(self) -> np.ndarray:
        return self.Z @ self.Z.T

    def dot(self, X) -> np.ndarray:
        """(Z Z^T) X without forming the product matrix."""
        return self.Z @ (self.Z.T @ X)

    def compressed(self, tol: float = 1e-12) -> "LowRankPsd":
        return LowRankPsd(compress_psd(self.Z, tol))

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_array(d / "Z.xarr", self.Z)

    @classmethod
    def load(cls, directory) -> "LowRankPsd":
        return cls(load_array(Path(directory) / "Z.xarr"))


class LowRankIndef:
    """Symmetric indefinite matrix in factored form X = Z D Z^T."""

    def __init__(self, Z, D):
        self.Z = np.ascontiguousarray(Z, dtype=float)
        self.D = np.ascontiguousarray(D, dtype=float)
        if self.Z.ndim != 2 or self.D.shape != (self.Z.shape[1], self.Z.shape[1]):
            raise ValueError("core dimension must match factor width")
        if self.D.size and not np.allclose(self.D, self.D.T, atol=1e-12):
            raise ValueError("core must be symmetric")

    @property
    def n(self):
        return self.Z.shape[0]

    @property
    def rank(self):
        return self.Z.shape[1]

    def to_dense(self) -> np.ndarray:
        return self.Z @ self.D @ self.Z.T

    def dot(self, X) -> np.ndarray:
        return self.Z @ (self.D @ (self.Z.T @ X))

    def compressed(self, tol: float = 1e-12) -> "LowRankIndef":
        Z, D = compress_ldl(self.Z, self.D, tol)
        return LowRankIndef(Z, D)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_array(d / "Z.xarr", self.Z)
        save_array(d / "D.xarr", self.D)

    @classmethod
    def load(cls, directory) -> "LowRankIndef":
        d = Path(directory)
        return cls(load_array(d / "Z.xarr"), load_array(d / "D.xarr"))


def compress_psd(Z, tol: float = 1e-12) -> np.ndarray:
    """Column compression of Z preserving Z Z^T to relative tolerance tol."""
    if Z.shape[1] == 0:
        return Z
    Q, R = np.linalg.qr(Z)
    U, s, _ = np.linalg.svd(R)
    if s.size == 0 or s[0] == 0:
        return Z[:, :0]
    keep = s > tol * s[0]
    return Q @ (U[:, keep] * s[keep])


def compress_ldl(Z, D, tol: float = 1e-12):
    """Column compression of (Z, D) preserving Z D Z^T to relative tolerance."""
    if Z.shape[1] == 0:
        return Z, D
    Q, R = np.linalg.qr(Z)
    T = R @ D @ R.T
    T = 0.5 * (T + T.T)
    lam, E = scipy.linalg.eigh(T)
    mx = np.max(np.abs(lam)) if lam.size else 0.0
    if mx == 0.0:
        return Z[:, :0], D[:0, :0]
    keep = np.abs(lam) > tol * mx
    return Q @ E[:, keep], np.diag(lam[keep])
