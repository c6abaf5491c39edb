"""Dense solvers for the generalized Riccati and Lyapunov equations.

These serve small problems directly and act as oracles for the low-rank
path.  Constrained (DAE) instances are handled by reduction onto an
orthonormal basis of ker J: the stabilizing solution of the reduced problem
lifts back as P = Theta X Theta^T, which solves the projected equations.

Equation conventions (all with SPD mass matrix M):

    Riccati:   A^T P M + M^T P A - M^T P B B^T P M = -C^T C
    Lyapunov:  F^T L M + M^T L F = -Q

Input scaling (Tikhonov weight on the control) is the caller's business: B
is taken as given.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .common import SynthesisError


def _dense(X):
    return X.toarray() if sp.issparse(X) else np.asarray(X, dtype=float)


def null_space_basis(J) -> np.ndarray:
    """Orthonormal (Euclidean) basis of ker J, columns spanning the kernel."""
    return scipy.linalg.null_space(_dense(J))


def reduce_to_kernel(J, *mats):
    """Project matrices onto ker J: returns Theta and each Theta^T X Theta."""
    Theta = null_space_basis(J)
    return (Theta,) + tuple(Theta.T @ _dense(X) @ Theta for X in mats)


def solve_riccati_dense(M, A0, B, C, J=None) -> np.ndarray:
    """Stabilizing solution of A0^T P M + M^T P A0 - M^T P B B^T P M = -C^T C.

    With a constraint J the equation is solved on ker J and lifted; the
    returned P then satisfies the projected equation and B^T P M is the
    correct feedback gain for constrained states.

    Raises SynthesisError when the solution fails the closed-loop eigenvalue
    check (no stabilizing solution).
    """
    M, A0, B, C = map(_dense, (M, A0, B, C))
    if J is None:
        Theta = None
        Mr, Ar, Br, Cr = M, A0, B, C
    else:
        Theta = null_space_basis(J)
        Mr = Theta.T @ M @ Theta
        Ar = Theta.T @ A0 @ Theta
        Br = Theta.T @ B
        Cr = C @ Theta
    p = Br.shape[1]
    X = scipy.linalg.solve_continuous_are(
        Ar, Br, Cr.T @ Cr, np.eye(p), e=Mr, s=None
    )
    X = 0.5 * (X + X.T)
    lam = closed_loop_eigvals_reduced(Mr, Ar, Br, X)
    if np.any(lam.real >= 0):
        raise SynthesisError(
            "Riccati solution is not stabilizing: closed-loop eigenvalue "
            f"with max real part {lam.real.max():.3e}"
        )
    if Theta is None:
        return X
    return Theta @ X @ Theta.T


def closed_loop_eigvals_reduced(Mr, Ar, Br, X) -> np.ndarray:
    """Generalized eigenvalues of (Ar - Br Br^T X Mr, Mr)."""
    K = Br.T @ X @ Mr
    return scipy.linalg.eigvals(Ar - Br @ K, Mr)


def closed_loop_eigvals(M, A0, B, K, J=None) -> np.ndarray:
    """Generalized closed-loop spectrum of (A0 - B K, M), reduced onto ker J."""
    M, A0, B = map(_dense, (M, A0, B))
    K = np.asarray(K, dtype=float)
    F = A0 - B @ K
    if J is None:
        return scipy.linalg.eigvals(F, M)
    Theta = null_space_basis(J)
    return scipy.linalg.eigvals(Theta.T @ F @ Theta, Theta.T @ M @ Theta)


def riccati_residual(M, A0, B, C, P, J=None) -> float:
    """Normalized Frobenius residual of the Riccati equation at P.

    For constrained problems the residual is evaluated in the reduced space
    (equivalently, pre/post multiplied by the kernel basis), normalized by
    the reduced ||C^T C||_F.
    """
    M, A0, B, C, P = map(_dense, (M, A0, B, C, P))
    if J is not None:
        Theta = null_space_basis(J)
        M = Theta.T @ M @ Theta
        A0 = Theta.T @ A0 @ Theta
        B = Theta.T @ B
        C = C @ Theta
        P = Theta.T @ P @ Theta
    R = (
        A0.T @ P @ M
        + M.T @ P @ A0
        - M.T @ P @ B @ (B.T @ P @ M)
        + C.T @ C
    )
    return float(np.linalg.norm(R) / max(np.linalg.norm(C.T @ C), 1e-300))


def solve_lyapunov_dense(M, F, W, S=None, J=None) -> np.ndarray:
    """Solve F^T L M + M^T L F = -W S W^T (S defaults to identity).

    Unconstrained instances reduce to a standard Lyapunov equation through
    G = F M^{-1}; constrained ones are solved on ker J and lifted.
    """
    M, F, W = map(_dense, (M, F, W))
    Q = W @ W.T if S is None else W @ _dense(S) @ W.T
    if J is not None:
        Theta = null_space_basis(J)
        Mr = Theta.T @ M @ Theta
        Fr = Theta.T @ F @ Theta
        Qr = Theta.T @ Q @ Theta
        return Theta @ _lyap_reduced(Mr, Fr, Qr) @ Theta.T
    return _lyap_reduced(M, F, Q)


def _sym(X):
    return 0.5 * (X + X.T)


def _lyap_reduced(M, F, Q) -> np.ndarray:
    G = scipy.linalg.solve(M, F.T).T          # G = F M^{-1}
    Mi_Q_Mi = scipy.linalg.solve(
        M.T, scipy.linalg.solve(M.T, Q.T).T
    )                                          # M^{-T} Q M^{-1}
    L = scipy.linalg.solve_continuous_lyapunov(G.T, -Mi_Q_Mi)
    return _sym(L)


def lyapunov_residual(M, F, W, L, S=None, J=None) -> float:
    """Normalized residual ||F^T L M + M^T L F + W S W^T||_F / ||W S W^T||_F."""
    M, F, W, L = map(_dense, (M, F, W, L))
    Q = W @ W.T if S is None else W @ _dense(S) @ W.T
    if J is not None:
        Theta = null_space_basis(J)
        M = Theta.T @ M @ Theta
        F = Theta.T @ F @ Theta
        Q = Theta.T @ Q @ Theta
        L = Theta.T @ L @ Theta
    R = F.T @ L @ M + M.T @ L @ F + Q
    return float(np.linalg.norm(R) / max(np.linalg.norm(Q), 1e-300))
