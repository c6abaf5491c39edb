"""Acceptance gate: one test per criterion, one printed verdict line each.

Verdict lines bypass pytest's capture so they appear in the live run log.
Criteria 2, 3, and 4 check the low-rank solvers against independently
computed dense solutions; criterion 7 runs the central closed-loop switch-on
comparison on the channel-cylinder benchmark and dominates the runtime.

Constrained trajectories produced here feed a shared accumulator; criterion
9 audits the algebraic constraint at every recorded step of each run.
"""

import time

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from xsdre.bench import BenchmarkSpec, make_benchmark
from xsdre.config import load_config
from xsdre.feedback import assemble, evaluate
from xsdre.mateq import (
    ImplicitOperator,
    SolverOptions,
    lyap_rhs_factor,
    riccati_residual,
    solve_lyapunov,
    solve_lyapunov_dense,
    solve_lyapunov_ldl,
    solve_riccati,
    solve_riccati_dense,
    solve_riccati_lowrank,
)
from xsdre.pipeline import CACHE_ENV, Pipeline, manifest_hash, run_pipeline
from xsdre.pod import SnapshotSet, compute_pod, projection_error
from xsdre.projector import LerayProjector
from xsdre.sim import (
    BracketError,
    ImexStepper,
    SimConfig,
    TestSignal,
    find_critical_tc,
    run,
    stabilized,
)

# constraint defects (label, max ||J v|| / ||v|| over steps) recorded by
# every constrained simulation in this module; criterion 9 audits the lot
J_DEFECTS: list = []


def _verdict(capsys, num, desc, ok, detail=""):
    line = f"[criterion {num}] {'PASS' if ok else 'FAIL'}: {desc}"
    if detail:
        line += f" ({detail})"
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def _record_j_defect(label, system, traj):
    if system.J is None or traj.states is None:
        return
    norms = np.linalg.norm(traj.states, axis=0)
    keep = norms > 0
    ratios = (np.linalg.norm(system.J @ traj.states[:, keep], axis=0)
              / norms[keep])
    J_DEFECTS.append((label, float(ratios.max(initial=0.0))))


def _stable_operator(n, seed, scale=1e-2):
    """Stable 1-D diffusion operator with a random diagonal mass matrix."""
    h = 1.0 / (n + 1)
    A = scale / h**2 * sp.diags(
        [np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1],
        format="csr")
    rng = np.random.default_rng(seed)
    M = sp.diags(rng.uniform(0.5, 2.0, n))
    return M, A


def _psd_factor(P, tol=1e-13):
    lam, V = np.linalg.eigh(0.5 * (P + P.T))
    keep = lam > tol * lam.max()
    return V[:, keep] * np.sqrt(lam[keep])


# -- criterion 1: projector invariants ------------------------------------

def _projector_defects(M, J, n_samples, rng):
    proj = LerayProjector(M, J)
    worst = np.zeros(3)
    for _ in range(n_samples):
        x = rng.standard_normal(M.shape[0])
        nx = np.linalg.norm(x)
        px = proj.apply(x)
        worst[0] = max(worst[0], np.linalg.norm(proj.apply(px) - px) / nx)
        worst[1] = max(worst[1], np.linalg.norm(J @ px) / nx)
        worst[2] = max(worst[2], np.linalg.norm(
            proj.apply_transpose(M @ x) - M @ px) / nx)
    return worst


def test_criterion_1_projector_invariants(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    cyl = make_benchmark(BenchmarkSpec("cylinder_fd", (80, 20), 300.0))
    assert 2000 <= cyl.n <= 4500
    worst = _projector_defects(cyl.M, cyl.J, 100, rng)
    syn = make_benchmark(BenchmarkSpec("synthetic", 300, 60.0, seed=5),
                         n_constraints=25)
    worst = np.maximum(worst, _projector_defects(syn.M, syn.J, 100, rng))
    elapsed = time.perf_counter() - t0
    ok = bool(np.all(worst <= 1e-10) and elapsed < 10.0)
    _verdict(capsys, 1, "projector idempotent / annihilating / M-selfadjoint"
             " within 1e-10 on cylinder and synthetic constrained systems",
             ok, f"defects {worst[0]:.1e}/{worst[1]:.1e}/{worst[2]:.1e}, "
                 f"{elapsed:.1f}s")


# -- criterion 2: Riccati correctness --------------------------------------

def test_criterion_2_riccati(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    dense_res, lowrank_rel, abscissas = [], [], []
    for n in (200, 400):
        M, A = _stable_operator(n, seed=n)
        B = rng.standard_normal((n, 2))
        C = rng.standard_normal((2, n))
        P = solve_riccati_dense(M, A, B, C)
        dense_res.append(riccati_residual(M, A, B, C, P))
        Z, rep = solve_riccati_lowrank(M, A, B, C, SolverOptions(tol=1e-8))
        lowrank_rel.append(
            np.linalg.norm(Z.Z @ Z.Z.T - P) / np.linalg.norm(P))
        K = B.T @ P @ M.toarray()
        lam = scipy.linalg.eigvals(A.toarray() - B @ K, M.toarray())
        abscissas.append(lam.real.max())
    # constrained instance, still inside the dense n <= 600 contract
    n, n_p = 180, 12
    M, A = _stable_operator(n, seed=77)
    J = sp.csr_matrix(rng.standard_normal((n_p, n)))
    B = rng.standard_normal((n, 2))
    C = rng.standard_normal((2, n))
    P = solve_riccati_dense(M, A, B, C, J=J)
    dense_res.append(riccati_residual(M, A, B, C, P, J=J))
    elapsed = time.perf_counter() - t0
    ok = bool(max(dense_res) <= 1e-9 and max(lowrank_rel) <= 1e-5
              and max(abscissas) < 0 and elapsed < 120.0)
    _verdict(capsys, 2, "dense Riccati residual <= 1e-9, low-rank matches "
             "dense to 1e-5, closed loop strictly stable", ok,
             f"residual {max(dense_res):.1e}, mismatch {max(lowrank_rel):.1e}"
             f", abscissa {max(abscissas):.3f}, {elapsed:.0f}s")


# -- criterion 3: Lyapunov correctness -------------------------------------

def test_criterion_3_lyapunov(capsys):
    n = 150
    rng = np.random.default_rng(3)
    M, A = _stable_operator(n, seed=9)
    B = rng.standard_normal((n, 1))
    C = rng.standard_normal((1, n))
    P0 = solve_riccati_dense(M, A, B, C)
    Z0 = _psd_factor(P0)
    A1 = sp.random(n, n, density=5.0 / n, random_state=4, format="csr")

    Ck, Sk = lyap_rhs_factor(M, A1, Z0)
    direct = (M.T @ Z0) @ (Z0.T @ A1.toarray())
    direct = direct + direct.T
    identity_err = (np.linalg.norm(Ck @ Sk @ Ck.T - direct)
                    / np.linalg.norm(direct))
    rhs_eigs = np.linalg.eigvalsh(Sk)

    K0 = B.T @ P0 @ M.toarray()
    op = ImplicitOperator(A, M).with_feedback(B, K0)
    fac, rep = solve_lyapunov_ldl(M, op, Ck, Sk, SolverOptions(tol=1e-9))
    want = solve_lyapunov_dense(M.toarray(), A.toarray() - B @ K0, Ck, S=Sk)
    rel = np.linalg.norm(fac.to_dense() - want) / np.linalg.norm(want)
    ok = bool(identity_err <= 1e-13 and rel <= 1e-6
              and rhs_eigs.min() < 0 < rhs_eigs.max())
    _verdict(capsys, 3, "LDL^T low-rank ADI matches the dense solution to "
             "1e-6 on an indefinite factored right-hand side", ok,
             f"core identity {identity_err:.1e}, mismatch {rel:.1e}, "
             f"rank {fac.rank}")


# -- criterion 4: first-order expansion error is second order --------------

def test_criterion_4_expansion_second_order(capsys):
    n, r = 60, 2
    rng = np.random.default_rng(4)
    d = rng.uniform(0.5, 2.0, n)
    M, Ms = np.diag(d), sp.diags(d)
    _, A0s = _stable_operator(n, seed=0)
    A0 = A0s.toarray() - 0.5 * np.eye(n)
    As = [rng.standard_normal((n, n)) / np.sqrt(n) for _ in range(r)]
    B = rng.standard_normal((n, 1))
    C = rng.standard_normal((1, n))
    P0 = solve_riccati_dense(M, A0, B, C)
    F = A0 - B @ (B.T @ P0 @ M)
    Ls = []
    for Ak in As:
        Ck, Sk = lyap_rhs_factor(Ms, sp.csr_matrix(Ak), _psd_factor(P0))
        Ls.append(solve_lyapunov_dense(M, F, Ck, S=Sk))
    slopes = []
    mags = np.logspace(-3, -1, 7)
    for _ in range(3):
        direction = rng.standard_normal(r)
        direction /= np.linalg.norm(direction)
        errs = []
        for mag in mags:
            rho = mag * direction
            A_rho = A0 + sum(rk * Ak for rk, Ak in zip(rho, As))
            P_rho = solve_riccati_dense(M, A_rho, B, C)
            approx = P0 + sum(rk * Lk for rk, Lk in zip(rho, Ls))
            errs.append(np.linalg.norm(P_rho - approx)
                        / np.linalg.norm(P_rho))
        slopes.append(np.polyfit(np.log10(mags), np.log10(errs), 1)[0])
    slopes = np.asarray(slopes)
    ok = bool(np.all(np.abs(slopes - 2.0) <= 0.2))
    _verdict(capsys, 4, "first-order solution expansion error scales as "
             "O(|rho|^2) against dense state-dependent solves", ok,
             "slopes " + "/".join(f"{s:.2f}" for s in slopes)
             + " over |rho| in [1e-3, 1e-1]")


# -- criterion 5: POD truncation identity ----------------------------------

def test_criterion_5_pod_truncation(capsys):
    rng = np.random.default_rng(5)
    n, m = 300, 80
    x = np.linspace(0.0, 1.0, n)
    X = np.column_stack([np.sin((k % 9 + 1) * np.pi * x)
                         * rng.standard_normal() / (1 + k % 9)
                         + 1e-3 * rng.standard_normal(n)
                         for k in range(m)])
    M = sp.diags(rng.uniform(0.5, 2.0, n))
    full = compute_pod(SnapshotSet(X, M), 25)
    energy = np.linalg.norm(full.sigma)
    worst, errors = 0.0, []
    for r in range(1, 21):
        trunc = full.truncated(r)
        direct = projection_error(trunc, X)
        worst = max(worst, abs(direct - trunc.tail_energy()) / energy)
        errors.append(direct)
    drops = np.diff(errors)
    ok = bool(worst <= 1e-8 and np.all(drops <= 1e-12 * energy))
    _verdict(capsys, 5, "measured subspace error equals the singular-value "
             "tail and is nonincreasing in the order", ok,
             f"identity defect {worst:.1e}, max increase {drops.max():.1e}")


# -- criterion 6: LQR coincides with order-zero feedback -------------------

def test_criterion_6_lqr_equals_order_zero(capsys):
    n, alpha = 80, 10.0
    rng = np.random.default_rng(6)
    M, A = _stable_operator(n, seed=11)
    B = rng.standard_normal((n, 2))
    C = rng.standard_normal((2, n))
    B_scaled = B / np.sqrt(alpha)
    Z, _ = solve_riccati(M, A, B_scaled, C, SolverOptions(tol=1e-8))
    basis = compute_pod(SnapshotSet(rng.standard_normal((n, 40)), M), 3)
    K_cl = (B_scaled.T @ Z.Z) @ (Z.Z.T @ M)
    closed = ImplicitOperator(A, M).with_feedback(B_scaled, K_cl)
    A1 = sp.random(n, n, density=0.1, random_state=2, format="csr")
    Ck, Sk = lyap_rhs_factor(M, A1, Z.Z)
    L1, _ = solve_lyapunov(M, closed, Ck, S=Sk)
    scheduled = assemble(Z, [L1], basis.truncated(1), B, M, alpha)
    lqr = assemble(Z, [], None, B, M, alpha)
    mismatch = sum(
        not np.array_equal(evaluate(scheduled.truncated(0), v),
                           evaluate(lqr, v))
        for v in rng.standard_normal((1000, n)))
    ok = mismatch == 0
    _verdict(capsys, 6, "order-zero truncation reproduces the LQR feedback "
             "exactly on 1,000 random states", ok,
             f"{mismatch} mismatching states")


# -- criterion 7: switch-on study on the supercritical cylinder ------------

# Calibrated protocol.  Reynolds 1400 is the first grid point of the 96x24
# surrogate with two unstable wake pairs (0.66 +- 4.95i, 0.10 +- 5.56i); the
# plain sin(t) excitation saturates onto the wake attractor by t ~ 15, so the
# bracket [2, 12] spans linear-regime through near-attractor switch-on states.
# This is the hardest operating point the box affords; milder Reynolds
# numbers leave every tested law stabilizing everywhere.
CYL_INI = """\
[benchmark]
kind = cylinder_fd
resolution = 96 24
reynolds = 1400.0

[snapshots]
count = 401
window = 12.0
amplitude = 1.0
frequency = 1.0

[reduction]
r_max = {r_max}
lambda = 0.75
r_list = {r_list}

[feedback]
alphas = {alpha}

[mateq]
tol = 1e-5
factor_tol = 1e-8
probe_shifts = 0.7+5.0j 0.12+5.6j

[simulation]
dt = 0.01
t_end = 65.0
bisect = 2.0 12.0 0.5
output_stride = 10

[output]
directory = {out}
"""

ORDERS = (2, 5, 10)       # scheduling orders compared against LQR
BRACKET = (2.0, 12.0, 0.5)
FULL_CELL_ALPHA = 1000.0  # penalty whose cell always runs every order

# the horizon must leave the slowest closed-loop mode (decay ~ 0.17) room to
# shed three decades after the latest switch-on: 12 + ln(1e3)/0.17 ~ 53;
# shorter horizons misread slow recoveries as failures


def _critical_tc(system, controller, sim):
    lo, hi, tol = BRACKET
    try:
        res = find_critical_tc(system, controller, lo, hi, tol, sim)
        return res.t_lo, res.t_hi
    except BracketError as exc:
        if "still stabilizes" in str(exc):
            return hi, np.inf      # boundary beyond the bracket
        if "does not stabilize" in str(exc):
            return -np.inf, lo     # boundary before the bracket
        raise


def _bracket_str(lo, hi):
    if not np.isfinite(hi):
        return f">= {lo:g}"
    if not np.isfinite(lo):
        return f"< {hi:g}"
    return f"in ({lo:g}, {hi:g})"


def _cylinder_cell(tmp_path, tag, alpha, r_max, r_list):
    ini = tmp_path / f"cyl_{tag}.ini"
    ini.write_text(CYL_INI.format(alpha=alpha, r_max=r_max,
                                  r_list=" ".join(str(r) for r in r_list),
                                  out=tmp_path / f"out_{tag}"))
    cfg = load_config(ini)
    pipe = Pipeline(cfg, jobs=1, log=lambda *_: None)
    pipe.run(upto="expansion")
    return cfg, pipe


def test_criterion_7_cylinder_switch_on(capsys, tmp_path):
    t0 = time.perf_counter()
    wins, details = [], []
    for alpha in (1.0, FULL_CELL_ALPHA):
        # the large-penalty cell always measures the scheduled orders; the
        # cheap-control cell starts with the Riccati alone, since an LQR that
        # covers the whole bracket already decides it (no strict separation
        # is measurable) and the derivative solves cost the better part of
        # an hour
        heavy = alpha == FULL_CELL_ALPHA
        r_max = max(ORDERS) if heavy else 0
        r_list = (0,) + ORDERS if heavy else (0,)
        cfg, pipe = _cylinder_cell(tmp_path, f"a{alpha:g}", alpha,
                                   r_max, r_list)
        system = pipe.shifted_system()
        sim = SimConfig(dt=cfg.dt, t_end=cfg.t_end,
                        test_signal=cfg.test_signal, output_stride=5)
        full = pipe.controller(alpha)
        lo_lqr, hi_lqr = _critical_tc(system, full.truncated(0), sim)
        if not heavy and not np.isfinite(hi_lqr):
            details.append(f"alpha={alpha:g}: t_c*(LQR) "
                           f"{_bracket_str(lo_lqr, hi_lqr)}")
            continue
        if not heavy:
            # LQR does fail inside the bracket: fetch the scheduled orders
            _, pipe = _cylinder_cell(tmp_path, f"a{alpha:g}_sched", alpha,
                                     max(ORDERS), (0,) + ORDERS)
            full = pipe.controller(alpha)
        best = (ORDERS[-1], -np.inf, -np.inf)
        for r in ORDERS:
            lo_s, hi_s = _critical_tc(system, full.truncated(r), sim)
            if lo_s > best[1]:
                best = (r, lo_s, hi_s)
        best_r, best_lo, best_hi = best
        margin = best_lo - hi_lqr
        if margin > 0:
            wins.append((alpha, best_r, margin))
            # confirmation runs inside the gap, recorded stepwise for the
            # criterion-9 constraint audit
            t_gap = 0.5 * (hi_lqr + best_lo)
            for label, law in (("lqr", full.truncated(0)),
                               ("sdre", full.truncated(best_r))):
                traj = run(system, SimConfig(
                    dt=cfg.dt, t_end=cfg.t_end, t_c=t_gap,
                    test_signal=cfg.test_signal, controller=law,
                    store_states=True))
                _record_j_defect(f"alpha={alpha} {label} tc={t_gap:.2f}",
                                 system, traj)
                assert stabilized(traj) == (label == "sdre"), (label, t_gap)
        else:
            # audit runs at the last switch-on time LQR still handles
            t_audit = lo_lqr if np.isfinite(lo_lqr) else BRACKET[0]
            for label, law in (("lqr", full.truncated(0)),
                               ("sdre", full.truncated(best_r))):
                traj = run(system, SimConfig(
                    dt=cfg.dt, t_end=cfg.t_end, t_c=t_audit,
                    test_signal=cfg.test_signal, controller=law,
                    store_states=True))
                _record_j_defect(f"alpha={alpha} {label} tc={t_audit:.2f}",
                                 system, traj)
        gap = (f"beats LQR by {margin:.2f}" if margin > 0 else
               "never beats LQR (LQR covers the bracket)"
               if not np.isfinite(hi_lqr) else
               "fails at the bracket foot" if not np.isfinite(best_lo)
               else f"trails LQR by {-margin:.2f}")
        details.append(f"alpha={alpha:g}: t_c*(LQR) "
                       f"{_bracket_str(lo_lqr, hi_lqr)}, best order {best_r} "
                       f"t_c* {_bracket_str(best_lo, best_hi)}, {gap}")
    elapsed = time.perf_counter() - t0
    ok = bool(wins and elapsed < 3600.0)
    _verdict(capsys, 7, "scheduled feedback keeps stabilizing the cylinder "
             "wake at switch-on times where LQR has already failed", ok,
             "; ".join(details) + f"; {elapsed / 60:.0f} min")


# -- criterion 8: pipeline determinism -------------------------------------

DET_INI = """\
[benchmark]
kind = burgers
resolution = 32
reynolds = 20.0

[snapshots]
count = 41
window = 0.4

[reduction]
r_max = 2

[feedback]
alphas = 1.0

[mateq]
tol = 1e-8

[simulation]
dt = 0.01
t_end = 20.0
t_c = 0.5
output_stride = 10

[output]
directory = {out}
"""


def test_criterion_8_pipeline_determinism(capsys, tmp_path, monkeypatch):
    # a shared stage cache would make the second run a file-identity no-op
    monkeypatch.delenv(CACHE_ENV, raising=False)
    hashes, trees = [], []
    for tag in ("a", "b"):
        ini = tmp_path / f"{tag}.ini"
        out = tmp_path / f"out_{tag}"
        ini.write_text(DET_INI.format(out=out))
        run_pipeline(load_config(ini), log=lambda *_: None)
        hashes.append(manifest_hash(out))
        trees.append({p.relative_to(out).as_posix(): p.read_bytes()
                      for p in sorted(out.rglob("*.csv"))})
    same_tree = (trees[0].keys() == trees[1].keys()
                 and all(trees[0][k] == trees[1][k] for k in trees[0]))
    ok = bool(hashes[0] == hashes[1] and same_tree and len(trees[0]) > 0)
    _verdict(capsys, 8, "independent end-to-end runs produce byte-identical "
             "tables and equal manifest hashes", ok,
             f"{len(trees[0])} files, manifest {hashes[0][:12]}")


# -- criterion 9: integrator order and constraint preservation -------------

def test_criterion_9_imex_order_and_constraint(capsys):
    # step-halving defect ~ C h^2 for a first-order one-step method; the
    # ladder must stay under h |lambda_max| ~ 1 to sit in that regime
    bench = make_benchmark(BenchmarkSpec("burgers", 32, 20.0))
    warm = run(bench, SimConfig(dt=0.005, t_end=1.0,
                                test_signal=TestSignal(1.0, 3.0)))
    v0, t0 = warm.v_end, 1.0
    signal = TestSignal(1.0, 3.0)

    def one_vs_two(h):
        u0 = signal(t0, bench.p)
        v_full, _ = ImexStepper(bench, h).step(v0, u0)
        half = ImexStepper(bench, h / 2)
        v_half, _ = half.step(v0, u0)
        v_half, _ = half.step(v_half, signal(t0 + h / 2, bench.p))
        return np.linalg.norm(v_full - v_half)

    hs = 1e-3 * 2.0 ** -np.arange(6)
    errs = np.array([one_vs_two(h) for h in hs])
    slope = np.polyfit(np.log10(hs), np.log10(errs), 1)[0]

    # a constrained closed-loop run of its own, then the audit of every
    # constrained trajectory recorded by earlier criteria
    cyl = make_benchmark(BenchmarkSpec("cylinder_fd", (48, 12), 40.0))
    traj = run(cyl, SimConfig(dt=0.01, t_end=5.0,
                              test_signal=TestSignal(1.0, 4.9),
                              store_states=True))
    _record_j_defect("cylinder open loop", cyl, traj)
    worst = max(d for _, d in J_DEFECTS)
    ok = bool(abs(slope - 2.0) <= 0.1 and worst <= 1e-10
              and len(J_DEFECTS) >= 1)
    _verdict(capsys, 9, "step-halving error slope is 2 (first-order "
             "method) and the constraint held at every recorded step", ok,
             f"slope {slope:.3f}, {len(J_DEFECTS)} audited runs, "
             f"max defect {worst:.1e}")
