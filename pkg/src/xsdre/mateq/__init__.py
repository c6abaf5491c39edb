"""Generalized Riccati / Lyapunov solvers: dense oracle path and low-rank path.

``solve_riccati`` and ``solve_lyapunov`` dispatch on problem size (dense below
``opts.dense_threshold``) and always return factored solutions plus a report,
so callers are agnostic to the path taken.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .common import (
    ConvergenceError,
    LowRankIndef,
    LowRankPsd,
    SolverOptions,
    SolverReport,
    SynthesisError,
    compress_ldl,
    compress_psd,
)
from .dense import (
    closed_loop_eigvals,
    lyapunov_residual,
    null_space_basis,
    riccati_residual,
    solve_lyapunov_dense,
    solve_riccati_dense,
)
from .lowrank import (
    ImplicitOperator,
    expansion_residual,
    lyap_rhs_factor,
    solve_lyapunov_ldl,
    solve_riccati_lowrank,
    stabilizing_feedback,
    unstable_eigenvalues,
)

__all__ = [
    "ConvergenceError", "SynthesisError", "SolverOptions", "SolverReport",
    "LowRankPsd", "LowRankIndef", "compress_psd", "compress_ldl",
    "solve_riccati_dense", "solve_lyapunov_dense", "riccati_residual",
    "lyapunov_residual", "closed_loop_eigvals", "null_space_basis",
    "ImplicitOperator", "solve_riccati_lowrank", "solve_lyapunov_ldl",
    "lyap_rhs_factor", "expansion_residual", "stabilizing_feedback",
    "unstable_eigenvalues",
    "solve_riccati", "solve_lyapunov",
]


def _psd_factor_from_dense(P, tol=1e-12):
    P = 0.5 * (P + P.T)
    lam, V = scipy.linalg.eigh(P)
    mx = max(lam.max(initial=0.0), 0.0)
    keep = lam > tol * max(mx, 1e-300)
    return LowRankPsd(V[:, keep] * np.sqrt(lam[keep]))


def _ldl_factor_from_dense(L, tol=1e-12):
    L = 0.5 * (L + L.T)
    lam, V = scipy.linalg.eigh(L)
    mx = np.abs(lam).max(initial=0.0)
    keep = np.abs(lam) > tol * max(mx, 1e-300)
    return LowRankIndef(V[:, keep], np.diag(lam[keep]))


def solve_riccati(M, A0, B, C, opts: SolverOptions | None = None, J=None,
                  K0=None, probe_shifts=()) -> tuple[LowRankPsd, SolverReport]:
    """Stabilizing Riccati solution in factored form, path chosen by size.

    A zero output map short-circuits to the exact minimal solution P = 0
    (costless states ask for no control); note that this branch is not
    stabilizing when the open loop is unstable.
    """
    opts = opts or SolverOptions()
    n = sp.csr_matrix(M).shape[0]
    if not np.asarray(C).any():
        report = SolverReport(method="riccati-trivial", converged=True,
                              iterations=0, residual=0.0)
        report.residuals = [0.0]
        report.ranks = [0]
        return LowRankPsd(np.zeros((n, 0))), report
    if n <= opts.dense_threshold:
        P = solve_riccati_dense(M, A0, B, C, J=J)
        report = SolverReport(method="riccati-dense", converged=True, iterations=1)
        report.residual = riccati_residual(M, A0, B, C, P, J=J)
        report.residuals = [report.residual]
        fac = _psd_factor_from_dense(P)
        report.ranks = [fac.rank]
        return fac, report
    return solve_riccati_lowrank(M, A0, B, C, opts, J=J, K0=K0,
                                 probe_shifts=probe_shifts)


def solve_lyapunov(M, F, W, S=None, opts: SolverOptions | None = None,
                   J=None) -> tuple[LowRankIndef, SolverReport]:
    """Generalized Lyapunov solution in LDL^T form, path chosen by size.

    F may be an ImplicitOperator for the closed-loop constrained case.
    """
    opts = opts or SolverOptions()
    op_given = isinstance(F, ImplicitOperator)
    n = sp.csr_matrix(M).shape[0]
    if n <= opts.dense_threshold:
        if op_given:
            Fd = F.apply(np.eye(n))
            Jd = F.J
        else:
            Fd = F.toarray() if sp.issparse(F) else np.asarray(F)
            Jd = J
        W = np.asarray(W, dtype=float)
        Ld = solve_lyapunov_dense(M, Fd, W, S=S, J=Jd)
        report = SolverReport(method="lyapunov-dense", converged=True, iterations=1)
        report.residual = lyapunov_residual(M, Fd, W, Ld, S=S, J=Jd)
        report.residuals = [report.residual]
        fac = _ldl_factor_from_dense(Ld)
        report.ranks = [fac.rank]
        return fac, report
    Sk = np.eye(np.asarray(W).shape[1]) if S is None else S
    return solve_lyapunov_ldl(M, F if op_given else sp.csr_matrix(F), np.asarray(W),
                              Sk, opts, J=J)
