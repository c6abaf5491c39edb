"""Low-rank solvers for large generalized Riccati and Lyapunov equations.

The Riccati solver is a Newton-Kleinman iteration whose Lyapunov steps run a
low-rank ADI; the Lyapunov solver is the same ADI core with an LDL^T-factored
right-hand side so indefinite data stays exact.  Conventions match the dense
module:

    Riccati:   A^T P M + M^T P A - M^T P B B^T P M = -C^T C
    Lyapunov:  F^T L M + M^T L F = -W S W^T

Constraints J v = 0 are handled implicitly: every shifted solve is a saddle
system that keeps iterates in ker J, and right-hand sides are pre-projected
by the transposed discrete projector.  The n x n solution or residual is
never formed; residual norms come from small projected matrices.

Shifts are self-generating: stable Ritz values of the operator pencil
projected onto the most recent ADI block (falling back to a crude
logarithmic real ladder when the projection yields nothing usable).
"""

from __future__ import annotations

from collections import deque

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..projector import LerayProjector
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


class ImplicitOperator:
    """Closed-loop operator F = A - B K with mass M and optional constraint J.

    Provides the pieces ADI needs: transposed applies, transposed shifted
    solves (F^T + mu M^T) V = W with J V = 0, and right-hand-side projection.
    The feedback correction is kept low-rank; shifted solves augment the
    saddle system with a p x p identity block instead of densifying A - B K.

    Shifted factorizations are cached FIFO with a small cap: each shift is
    normally consumed by a single ADI step, and an unbounded cache holds
    gigabytes of complex LU factors when one operator serves many solves.
    """

    lu_cache_cap = 4

    def __init__(self, A, M, J=None, B=None, K=None):
        self.A = sp.csr_matrix(A)
        self.M = sp.csr_matrix(M)
        self.J = None if J is None else sp.csr_matrix(J)
        self.n = self.A.shape[0]
        if B is None:
            self.B = None
            self.K = None
        else:
            self.B = np.asarray(B, dtype=float)
            self.K = np.asarray(K, dtype=float)
        self._lu_cache = {}
        self._projector = None

    def with_feedback(self, B, K) -> "ImplicitOperator":
        return ImplicitOperator(self.A, self.M, self.J, B, K)

    @property
    def projector(self) -> LerayProjector | None:
        if self.J is not None and self._projector is None:
            self._projector = LerayProjector(self.M, self.J)
        return self._projector

    def apply(self, X):
        """F X = A X - B (K X)."""
        Y = self.A @ X
        if self.B is not None:
            Y = Y - self.B @ (self.K @ X)
        return Y

    def apply_t(self, X):
        """F^T X = A^T X - K^T (B^T X)."""
        Y = self.A.T @ X
        if self.B is not None:
            Y = Y - self.K.T @ (self.B.T @ X)
        return Y

    def project_t(self, W):
        """Pi^T W (identity when unconstrained)."""
        if self.J is None:
            return np.asarray(W, dtype=float)
        return self.projector.apply_transpose(W)

    def state_projection(self, W):
        """Pi M^{-1} W: pulls dual-side data into ker J (for shift seeding)."""
        if self.J is None:
            return spla.spsolve(sp.csc_matrix(self.M), W)
        x, _ = self.projector._saddle.solve(W)
        return x

    def _shifted_lu(self, mu):
        key = complex(mu)
        if key in self._lu_cache:
            return self._lu_cache[key]
        dtype = complex if np.iscomplex(mu) else float
        shifted = (self.A.T + mu * self.M.T).astype(dtype)
        blocks = [[shifted]]
        if self.B is not None:
            p = self.B.shape[1]
            blocks[0].append(sp.csr_matrix(self.K.T.astype(dtype)))
            blocks.append([sp.csr_matrix(self.B.T.astype(dtype)), sp.identity(p, dtype=dtype)])
        if self.J is not None:
            n_rows = len(blocks)
            blocks[0].append(self.J.T.astype(dtype))
            for i in range(1, n_rows):
                blocks[i].append(None)
            last = [self.J.astype(dtype)] + [None] * (len(blocks[0]) - 2) + [None]
            blocks.append(last)
        lu = spla.splu(sp.bmat(blocks, format="csc"))
        self._lu_cache[key] = lu
        while len(self._lu_cache) > self.lu_cache_cap:
            self._lu_cache.pop(next(iter(self._lu_cache)))
        return lu

    def solve_shifted_t(self, mu, W):
        """V with (F^T + mu M^T) V = W on ker J (i.e. J V = 0)."""
        W = np.atleast_2d(np.asarray(W))
        if W.shape[0] != self.n:
            W = W.T
        k = W.shape[1]
        extra = (0 if self.B is None else self.B.shape[1]) + (
            0 if self.J is None else self.J.shape[0]
        )
        dtype = complex if np.iscomplex(mu) else float
        rhs = np.vstack([W.astype(dtype), np.zeros((extra, k), dtype=dtype)])
        sol = self._shifted_lu(mu).solve(rhs)
        return sol[: self.n]


def _ldl_norm(W, S=None) -> float:
    """|| W S W^T ||_F from the small Gramian (S = identity when None)."""
    G = W.T @ W
    if S is None:
        return float(np.linalg.norm(G))
    T = S @ G
    return float(np.sqrt(abs(np.trace(T @ T))))


def _stable_ritz(op: ImplicitOperator, U) -> list:
    """Stable Ritz values of the pencil (F, M) projected onto span(U).

    Complex values are returned once per conjugate pair (positive imaginary
    part); the caller expands pairs via the real double step.
    """
    U = np.atleast_2d(U)
    if U.shape[0] != op.n:
        U = U.T
    if np.iscomplexobj(U):
        U = np.hstack([U.real, U.imag])
    Q, R, _ = scipy.linalg.qr(U, mode="economic", pivoting=True)
    if R.size:
        d = np.abs(np.diag(R))
        rank = int(np.sum(d > 1e-12 * d[0])) if d[0] > 0 else 0
        Q = Q[:, :rank]
    if Q.shape[1] == 0:
        return []
    Fs = Q.T @ op.apply(Q)
    Ms = Q.T @ (op.M @ Q)
    lam = scipy.linalg.eigvals(Fs, Ms)
    lam = lam[np.isfinite(lam)]
    lam = lam[lam.real < 0]
    lam = lam[lam.imag >= 0]  # one per conjugate pair
    # heuristic ordering: sweep from slow to fast modes
    return sorted(lam, key=lambda z: abs(z))


def _fallback_shifts(op: ImplicitOperator, W) -> list:
    """Crude real ladder when projection yields no stable Ritz values."""
    scale = max(abs(op.A).sum(axis=1).max() / max(abs(op.M).sum(axis=1).max(), 1e-300), 1.0)
    return list(-scale * np.logspace(-2.0, 0.0, 4))


def _adi_core(op: ImplicitOperator, W0, S, opts: SolverOptions, report: SolverReport,
              tol: float):
    """LDL^T low-rank ADI for F^T X M + M^T X F = -W0 S W0^T.

    Returns (Z, D) with X ~= Z D Z^T; for S=None the scaling is folded into
    Z and D is the identity (PSD mode).  W0 must already be projected.
    """
    W = np.array(W0, dtype=float, copy=True)
    norm0 = _ldl_norm(W, S)
    if norm0 == 0.0:
        return W[:, :0], np.zeros((0, 0))
    k = W.shape[1]
    Z_blocks, D_vals = [], []
    shifts = deque()
    seed = op.state_projection(W)
    residual = 1.0
    for step in range(1, opts.adi_max_steps + 1):
        if not shifts:
            cand = _stable_ritz(op, seed)
            if not cand:
                cand = _fallback_shifts(op, W)
            shifts = deque(cand[: opts.shift_batch])
        mu = shifts.popleft()
        if abs(mu.imag) < 1e-12 * abs(mu.real):
            mu = mu.real
            V = op.solve_shifted_t(mu, W)
            W = W - 2.0 * mu * (op.M.T @ V)
            if S is None:
                Z_blocks.append(np.sqrt(-2.0 * mu) * V)
            else:
                Z_blocks.append(V)
                D_vals.append(-2.0 * mu * S)
            seed = V
        else:
            # conjugate pair fused into one real double step; the pair
            # contributes -4 Re(mu) (V1 V1^T + V2 V2^T) to X
            V = op.solve_shifted_t(mu, W)
            delta = mu.real / mu.imag
            V1 = V.real + delta * V.imag
            V2 = np.sqrt(delta * delta + 1.0) * V.imag
            W = W - 4.0 * mu.real * (op.M.T @ V1)
            if S is None:
                Z_blocks.append(np.sqrt(-4.0 * mu.real) * V1)
                Z_blocks.append(np.sqrt(-4.0 * mu.real) * V2)
            else:
                Z_blocks.append(V1)
                Z_blocks.append(V2)
                D_vals.append(-4.0 * mu.real * S)
                D_vals.append(-4.0 * mu.real * S)
            seed = np.hstack([V1, V2])
        residual = _ldl_norm(W, S) / norm0
        report.shifts.append(complex(mu))
        report.residuals.append(residual)
        report.ranks.append(sum(b.shape[1] for b in Z_blocks))
        report.iterations = step
        if residual <= tol:
            break
        if sum(b.shape[1] for b in Z_blocks) > opts.compress_above:
            Z_blocks, D_vals = _fold_compress(Z_blocks, D_vals, S, opts.compression_tol)
    Z = np.hstack(Z_blocks) if Z_blocks else W[:, :0]
    if S is None:
        D = np.eye(Z.shape[1])
    else:
        D = scipy.linalg.block_diag(*D_vals) if D_vals else np.zeros((0, 0))
    report.residual = residual
    report.converged = residual <= tol
    return Z, D


def _fold_compress(Z_blocks, D_vals, S, tol):
    Z = np.hstack(Z_blocks)
    if S is None:
        return [compress_psd(Z, tol)], []
    D = scipy.linalg.block_diag(*D_vals)
    Zc, Dc = compress_ldl(Z, D, tol)
    return [Zc], [Dc]


def solve_lyapunov_ldl(M, A0cl, Ck, Sk, opts: SolverOptions | None = None,
                       J=None) -> tuple[LowRankIndef, SolverReport]:
    """Low-rank solution of A0cl^T L M + M^T L A0cl = -Ck Sk Ck^T.

    A0cl may be a sparse matrix or an ImplicitOperator (closed-loop form
    A - B K with constraint); the right-hand side is pre-projected.  Returns
    factors with symmetric, possibly indefinite core.
    """
    opts = opts or SolverOptions()
    op = A0cl if isinstance(A0cl, ImplicitOperator) else ImplicitOperator(A0cl, M, J)
    report = SolverReport(method="lyapunov-ldl-adi")
    Ck = np.asarray(Ck, dtype=float)
    Sk = np.asarray(Sk, dtype=float)
    if Ck.size == 0 or np.linalg.norm(Ck) == 0.0:
        report.converged = True
        report.residual = 0.0
        return LowRankIndef(np.zeros((op.n, 0)), np.zeros((0, 0))), report
    W0 = op.project_t(Ck)
    Z, D = _adi_core(op, W0, Sk, opts, report, tol=opts.tol)
    if not report.converged:
        raise ConvergenceError(
            f"ADI stalled at normalized residual {report.residual:.3e} "
            f"after {report.iterations} steps",
            report,
        )
    Z, D = compress_ldl(Z, D, opts.compression_tol)
    report.ranks.append(Z.shape[1])
    return LowRankIndef(Z, D), report


def lyap_rhs_factor(M, A_k, Z0):
    """Factor the derivative-equation right-hand side without forming it.

    Returns (Ck, Sk) with Ck = [M^T Z0, A_k^T Z0] and Sk the symmetric swap
    core [[0, I], [I, 0]], so that Ck Sk Ck^T = M^T Z0 Z0^T A_k + A_k^T Z0 Z0^T M
    exactly.
    """
    Z0 = np.asarray(Z0, dtype=float)
    ell = Z0.shape[1]
    Ck = np.hstack([M.T @ Z0, A_k.T @ Z0])
    eye = np.eye(ell)
    zero = np.zeros((ell, ell))
    Sk = np.block([[zero, eye], [eye, zero]])
    return Ck, Sk


def _riccati_residual_lowrank(op: ImplicitOperator, B, C, Z) -> float:
    """Normalized CARE residual at P = Z Z^T from projected small factors.

    Residual = U S U^T with U = [Pi^T(A^T Z), M Z, Pi^T(C^T)]; the norm comes
    from the QR of U, never from an n x n matrix.
    """
    Ct = op.project_t(np.asarray(C, dtype=float).T)
    norm_cc = _ldl_norm(Ct)
    if Z.shape[1] == 0:
        return 1.0 if norm_cc > 0 else 0.0
    AtZ = op.project_t(op.A.T @ Z)
    MZ = op.M @ Z
    U = np.hstack([AtZ, MZ, Ct])
    ell, q = Z.shape[1], Ct.shape[1]
    BtZ = np.asarray(B).T @ Z
    S = np.zeros((2 * ell + q, 2 * ell + q))
    S[:ell, ell:2 * ell] = np.eye(ell)
    S[ell:2 * ell, :ell] = np.eye(ell)
    S[ell:2 * ell, ell:2 * ell] = -(BtZ.T @ BtZ)
    S[2 * ell:, 2 * ell:] = np.eye(q)
    R = np.linalg.qr(U, mode="r")
    T = R @ S @ R.T
    return float(np.linalg.norm(T) / max(norm_cc, 1e-300))


def unstable_eigenvalues(M, A, J=None, probe_shifts=(), n_ritz=12,
                         dense_threshold=600, unstable_tol=1e-9) -> np.ndarray:
    """Generalized eigenvalues of (A, M) on ker J with positive real part.

    Sorted by descending real part.  The dense path sees the whole reduced
    spectrum; the sparse path only reports modes reachable by shift-invert
    around the probe shifts, so an empty result at large n is evidence of
    stability, not proof.
    """
    A = sp.csr_matrix(A)
    M = sp.csr_matrix(M)
    if A.shape[0] <= dense_threshold:
        lam, _ = _left_eigs_dense(M, A, J)
    else:
        lam, _ = _left_eigs_sparse(M, A, J, probe_shifts, n_ritz)
    lam = lam[np.isfinite(lam)]
    lam = lam[lam.real > unstable_tol]
    return lam[np.argsort(lam.real)[::-1]]


def stabilizing_feedback(M, A, B, J=None, probe_shifts=(), n_ritz=12,
                         dense_threshold=600, unstable_tol=1e-9) -> np.ndarray:
    """Initial feedback K0 such that (A - B K0, M) is stable on ker J.

    Reflects the unstable spectrum: solves a small Bernoulli-type equation on
    the antistable left invariant subspace, leaving stable modes untouched.
    Returns the zero matrix when no unstable modes are detected.  Small
    problems use a dense eigensolve; large ones locate unstable modes by
    shift-invert iterations around the supplied probe shifts.
    """
    A = sp.csr_matrix(A)
    M = sp.csr_matrix(M)
    B = np.asarray(B, dtype=float)
    n, p = B.shape
    if n <= dense_threshold:
        lam, W = _left_eigs_dense(M, A, J)
    else:
        lam, W = _left_eigs_sparse(M, A, J, probe_shifts, n_ritz)
    keep = lam.real > unstable_tol
    lam, W = lam[keep], W[:, keep]
    if lam.size == 0:
        return np.zeros((p, n))
    lam, W = _close_under_conjugation(lam, W)
    # Columns of W satisfy W^T A = diag(lam) W^T M, so in the Hermitian
    # pairing used below the reduced dynamics carry the conjugate spectrum:
    # W^H A = diag(conj(lam)) W^H M.  With a single conjugate pair the
    # mismatch cancels by symmetry; with several pairs the cross couplings
    # pick up wrong denominators and the reflection misses modes.
    lam = lam.conj()
    Bw = W.conj().T @ B
    Y = scipy.linalg.solve_sylvester(np.diag(lam), np.diag(lam.conj()), Bw @ Bw.conj().T)
    Y = 0.5 * (Y + Y.conj().T)
    cond = np.linalg.cond(Y)
    if not np.isfinite(cond) or cond > 1e12:
        raise SynthesisError(
            "unstable subspace is nearly uncontrollable "
            f"(projected Gramian condition {cond:.2e})"
        )
    X = np.linalg.inv(Y)
    K0 = Bw.conj().T @ X @ (W.conj().T @ M)
    if np.abs(K0.imag).max() > 1e-8 * max(np.abs(K0.real).max(), 1e-300):
        raise SynthesisError("stabilizing feedback came out non-real; "
                             "unstable eigenvalue set not conjugation-closed")
    return np.ascontiguousarray(K0.real)


def _close_under_conjugation(lam, W, tol=1e-8):
    """Ensure complex eigenvalues appear with their conjugate partners."""
    out_l, out_w = [], []
    used = np.zeros(lam.size, dtype=bool)
    for i in range(lam.size):
        if used[i]:
            continue
        out_l.append(lam[i])
        out_w.append(W[:, i])
        used[i] = True
        if abs(lam[i].imag) > tol * abs(lam[i]):
            partner = None
            for j in range(i + 1, lam.size):
                if not used[j] and abs(lam[j] - lam[i].conj()) < tol * abs(lam[i]):
                    partner = j
                    break
            if partner is None:
                out_l.append(lam[i].conj())
                out_w.append(W[:, i].conj())
            else:
                out_l.append(lam[partner])
                out_w.append(W[:, partner])
                used[partner] = True
    return np.array(out_l), np.column_stack(out_w)


def _left_eigs_dense(M, A, J):
    """All left eigenpairs (as transposed-pencil right pairs), dense path."""
    from .dense import null_space_basis

    Ad, Md = A.toarray(), M.toarray()
    if J is None:
        lam, W = scipy.linalg.eig(Ad.T, Md.T)
        return lam, W
    Theta = null_space_basis(J)
    Ar = Theta.T @ Ad @ Theta
    Mr = Theta.T @ Md @ Theta
    lam, Wr = scipy.linalg.eig(Ar.T, Mr.T)
    return lam, Theta @ Wr


def _left_eigs_sparse(M, A, J, probe_shifts, n_ritz):
    """Unstable-side eigenpairs of the transposed (possibly saddle) pencil.

    Shift-invert around each probe; infinite eigenvalues of the saddle pencil
    map to zero under the inverted operator and drop out of the Ritz set.
    """
    n = A.shape[0]
    if J is None:
        Asad_t = sp.csr_matrix(A.T)
        Msad_t = sp.csr_matrix(M.T)
    else:
        Asad_t = sp.bmat([[A.T, J.T], [J, None]], format="csr")
        Msad_t = sp.bmat(
            [[M.T, None], [None, sp.csr_matrix((J.shape[0], J.shape[0]))]],
            format="csr",
        )
    if not probe_shifts:
        probe_shifts = (0.1,)
    lam_all, W_all = [], []
    N = Asad_t.shape[0]
    for sigma in probe_shifts:
        try:
            lu = spla.splu(sp.csc_matrix((Asad_t - sigma * Msad_t).astype(complex)))
        except RuntimeError:
            # probe sitting exactly on an eigenvalue; nudge it off
            sigma = sigma + 1e-3 * max(abs(sigma), 1.0)
            lu = spla.splu(sp.csc_matrix((Asad_t - sigma * Msad_t).astype(complex)))

        def opmat(x):
            return lu.solve(Msad_t @ x)

        OP = spla.LinearOperator((N, N), matvec=opmat, dtype=complex)
        k = min(n_ritz, N - 2)
        theta, V = spla.eigs(OP, k=k, which="LM")
        good = np.abs(theta) > 1e-10
        lam = sigma + 1.0 / theta[good]
        W = V[:n, good]
        lam_all.append(lam)
        W_all.append(W)
    lam = np.concatenate(lam_all)
    W = np.hstack(W_all)
    # dedupe eigenvalues found from multiple probes
    order = np.argsort(lam.real)[::-1]
    lam, W = lam[order], W[:, order]
    keep = []
    for i in range(lam.size):
        if all(abs(lam[i] - lam[j]) > 1e-6 * max(abs(lam[i]), 1.0) for j in keep):
            keep.append(i)
    return lam[keep], W[:, keep]


def solve_riccati_lowrank(M, A0, B, C, opts: SolverOptions | None = None,
                          J=None, K0=None, probe_shifts=()) -> tuple[LowRankPsd, SolverReport]:
    """Newton-Kleinman-ADI for the stabilizing low-rank Riccati solution.

    Each Newton step solves the closed-loop Lyapunov equation

        (A0 - B K_i)^T P M + M^T P (A0 - B K_i) = -C^T C - K_i^T K_i

    by low-rank ADI; the gain update is K_{i+1} = B^T P M computed from the
    factors.  K0 seeds the iteration; when omitted an unstable-subspace
    feedback is synthesized automatically (zero for stable pencils).
    The outer residual is the normalized Riccati residual in low-rank form.
    """
    opts = opts or SolverOptions()
    op = A0 if isinstance(A0, ImplicitOperator) else ImplicitOperator(A0, M, J)
    M, A0 = op.M, op.A
    B = np.asarray(B, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    report = SolverReport(method="riccati-nk-adi")
    if np.linalg.norm(C) == 0.0 and K0 is None:
        report.converged = True
        report.residual = 0.0
        return LowRankPsd(np.zeros((op.n, 0))), report
    if K0 is None:
        K0 = stabilizing_feedback(M, A0, B, J=op.J, probe_shifts=probe_shifts,
                                  dense_threshold=opts.dense_threshold)
    K = np.asarray(K0, dtype=float)
    Ct = C.T
    cc_norm = _ldl_norm(op.project_t(Ct))
    Z = np.zeros((op.n, 0))
    residual = np.inf
    for it in range(1, opts.newton_max_steps + 1):
        opK = op.with_feedback(B, K)
        W0 = opK.project_t(np.hstack([Ct, K.T]))
        # the outer residual is normalized by ||C^T C||; the inner solve is
        # normalized by ||W0 W0^T||, which grows with ||K||^2.  Rescale so the
        # inner accuracy is absolute in outer units.
        tol_i = float(np.clip(opts.inner_tol() * cc_norm / max(_ldl_norm(W0), 1e-300),
                              1e-14, 1e-1))
        inner = SolverReport(method="nk-inner-adi")
        Zi, _D = _adi_core(opK, W0, None, opts, inner, tol=tol_i)
        if not inner.converged:
            raise ConvergenceError(
                f"inner ADI stalled at Newton step {it} "
                f"(residual {inner.residual:.3e})",
                inner,
            )
        Z = compress_psd(Zi, opts.compression_tol)
        K = (B.T @ Z) @ (Z.T @ M)
        residual = _riccati_residual_lowrank(op, B, C, Z)
        report.iterations = it
        report.residuals.append(residual)
        report.ranks.append(Z.shape[1])
        report.shifts.extend(inner.shifts)
        if residual <= opts.tol:
            break
    report.residual = residual
    report.converged = residual <= opts.tol
    if not report.converged:
        raise ConvergenceError(
            f"Newton iteration stopped at normalized residual {residual:.3e} "
            f"after {report.iterations} steps",
            report,
        )
    return LowRankPsd(Z), report


def expansion_residual(M, A0, coeffs, B, C, P0, Ls, rho_hat_samples) -> np.ndarray:
    """Sampled Riccati residuals of the first-order solution expansion.

    For each scheduling sample rho, evaluates the state-dependent Riccati
    residual at P(rho) = P0 + sum_k rho_k L_k with coefficient
    A(rho) = A0 + sum_k rho_k A_k, normalized by ||C^T C||_F.  Dense
    evaluation: meant for desk-scale diagnostics, not the large-scale path.
    Residuals are O(|rho|^2) near the expansion point.
    """
    def dense(X):
        if hasattr(X, "to_dense"):
            return X.to_dense()
        return X.toarray() if sp.issparse(X) else np.asarray(X, dtype=float)

    M, A0, B, C = map(dense, (M, A0, B, C))
    P0 = dense(P0)
    Ls = [dense(L) for L in Ls]
    coeffs = [dense(Ak) for Ak in coeffs]
    norm_cc = max(np.linalg.norm(C.T @ C), 1e-300)
    out = []
    for rho in np.atleast_2d(np.asarray(rho_hat_samples, dtype=float)):
        A = A0 + sum(rk * Ak for rk, Ak in zip(rho, coeffs))
        P = P0 + sum(rk * Lk for rk, Lk in zip(rho, Ls))
        R = A.T @ P @ M + M.T @ P @ A - M.T @ P @ B @ (B.T @ P @ M) + C.T @ C
        out.append(np.linalg.norm(R) / norm_cc)
    return np.asarray(out)
