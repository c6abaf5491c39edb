"""Simulation-layer tests: steady states, IMEX stepping, protocol, bisection.

Oracles: hand formulas for the scalar step, matrix exponentials for the order
sweep, scipy.integrate for the basin-crossing time, dense eigenvalues for the
closed-loop decay rate.
"""

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from xsdre.feedback import assemble
from xsdre.mateq import solve_riccati
from xsdre.model import BilinearOperator, QuadraticSystem, rhs
from xsdre.sim import (
    BracketError,
    ImexStepper,
    NewtonError,
    SimConfig,
    TestSignal,
    find_critical_tc,
    imex_step,
    run,
    stabilized,
    steady_state,
)


def scalar_system(a, nl, b=1.0, c=1.0, f=None):
    N = BilinearOperator(1, [0], [0], [0], [nl]) if nl else BilinearOperator.zero(1)
    return QuadraticSystem(
        M=sp.identity(1, format="csr"),
        A=sp.csr_matrix(np.array([[float(a)]])),
        N=N,
        B=np.array([[float(b)]]),
        C=np.array([[float(c)]]),
        f=None if f is None else np.array([float(f)]),
    )


def small_bilinear(n, n_terms, scale, seed):
    rng = np.random.default_rng(seed)
    return BilinearOperator(
        n,
        rng.integers(0, n, n_terms),
        rng.integers(0, n, n_terms),
        rng.integers(0, n, n_terms),
        scale * rng.standard_normal(n_terms),
    )


def constrained_system(n=6, n_p=2, seed=0, nl_scale=0.05):
    rng = np.random.default_rng(seed)
    L = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
    A = -sp.csr_matrix(L) - sp.identity(n)
    J = sp.csr_matrix(rng.standard_normal((n_p, n)))
    N = small_bilinear(n, 12, nl_scale, seed + 1)
    B = rng.standard_normal((n, 2))
    C = rng.standard_normal((3, n))
    return QuadraticSystem(M=sp.identity(n, format="csr"), A=A, N=N, B=B, C=C, J=J)


# --- steady states ----------------------------------------------------------


def test_steady_state_linear_zero_forcing_is_origin():
    sys = scalar_system(-2.0, 0.0)
    res = steady_state(sys)
    assert res.v.shape == (1,)
    assert np.all(res.v == 0.0)
    assert res.shifted.f is None


def test_steady_state_manufactured_constrained():
    base = constrained_system(seed=3)
    rng = np.random.default_rng(7)
    v_star = rng.standard_normal(base.n)
    p_star = rng.standard_normal(base.n_p)
    f = -(base.A @ v_star + base.N.apply(v_star, v_star) + base.J.T @ p_star)
    g = base.J @ v_star
    sys = QuadraticSystem(M=base.M, A=base.A, N=base.N, B=base.B, C=base.C,
                          J=base.J, f=f, g=g)
    v, p, shifted = steady_state(sys)
    # independent residual evaluation, not the Newton iterate's own bookkeeping
    res = sys.N.apply(v, v) + sys.A @ v + sys.J.T @ p + sys.f
    scale = max(np.linalg.norm(sys.f), 1.0)
    assert np.linalg.norm(res) <= 1e-10 * scale
    assert np.linalg.norm(sys.J @ v - g) <= 1e-10 * max(np.linalg.norm(v), 1.0)
    # mild nonlinearity: Newton should land on the manufactured root
    assert np.linalg.norm(v - v_star) <= 1e-7 * np.linalg.norm(v_star)
    assert shifted.f is None and shifted.g is None
    assert shifted.meta["shifted_from_steady_state"]


def test_shifted_system_reproduces_dynamics_about_steady_state():
    # unconstrained so no pressure term enters the comparison
    n = 5
    rng = np.random.default_rng(11)
    A = -sp.identity(n) - 0.3 * sp.csr_matrix(rng.standard_normal((n, n)))
    N = small_bilinear(n, 10, 0.04, 5)
    v_star = rng.standard_normal(n)
    f = -(A @ v_star + N.apply(v_star, v_star))
    sys = QuadraticSystem(M=sp.identity(n, format="csr"), A=A, N=N,
                          B=np.ones((n, 1)), C=np.eye(n), f=f)
    v, _, shifted = steady_state(sys)
    assert np.linalg.norm(v - v_star) <= 1e-8 * np.linalg.norm(v_star)
    w = rng.standard_normal(n)
    u = rng.standard_normal(1)
    lhs = rhs(sys, v + w, u)
    lhs_shift = rhs(shifted, w, u)
    assert np.linalg.norm(lhs - lhs_shift) <= 1e-11 * max(np.linalg.norm(lhs), 1.0)


def test_steady_state_newton_divergence_raises():
    sys = scalar_system(1.0, 1.0, f=-5.0)
    with pytest.raises(NewtonError):
        steady_state(sys, max_iter=2)


# --- IMEX stepping ----------------------------------------------------------


def test_imex_scalar_matches_hand_formula():
    a, nl, b = -0.7, 0.4, 2.0
    sys = scalar_system(a, nl, b=b)
    v = np.array([1.3])
    u = np.array([0.3])
    dt = 0.05
    v_plus, p_plus = imex_step(sys, v, u, dt)
    expected = (v[0] + dt * (nl * v[0] ** 2 + b * u[0])) / (1.0 - dt * a)
    assert abs(v_plus[0] - expected) <= 1e-14
    assert p_plus.size == 0
    # linear special case reduces to implicit Euler
    lin = scalar_system(a, 0.0)
    v_lin, _ = imex_step(lin, v, np.zeros(1), dt)
    assert abs(v_lin[0] - v[0] / (1.0 - dt * a)) <= 1e-14


def test_imex_one_step_error_is_second_order():
    # linear problem: exact flow by matrix exponential, error(dt) ~ C dt^2
    n = 5
    rng = np.random.default_rng(2)
    M = sp.diags(1.0 + rng.random(n))
    A = sp.csr_matrix(-np.eye(n) + 0.4 * rng.standard_normal((n, n)))
    sys = QuadraticSystem(M=M, A=A, N=BilinearOperator.zero(n),
                          B=np.ones((n, 1)), C=np.eye(n))
    Minv_A = np.linalg.solve(M.toarray(), A.toarray())
    v0 = rng.standard_normal(n)
    errs = []
    dts = [0.1 / 2**k for k in range(5)]
    for dt in dts:
        v1, _ = imex_step(sys, v0, np.zeros(1), dt)
        exact = scipy.linalg.expm(dt * Minv_A) @ v0
        errs.append(np.linalg.norm(v1 - exact))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.7) and np.all(orders < 2.3)
    assert abs(orders.mean() - 2.0) <= 0.1


def test_imex_stepper_cache_and_class_agree():
    sys = scalar_system(-1.0, 0.3)
    stepper = ImexStepper(sys, 0.02)
    v = np.array([0.8])
    u = np.array([0.1])
    a, _ = stepper.step(v, u)
    b, _ = imex_step(sys, v, u, 0.02)
    assert a == pytest.approx(b)
    with pytest.raises(ValueError):
        ImexStepper(sys, 0.0)


def test_imex_preserves_constraint_every_step():
    sys = constrained_system(seed=9, nl_scale=0.02)
    cfg = SimConfig(dt=0.02, t_end=1.2, store_states=True)
    traj = run(sys, cfg)
    assert not traj.blowup
    V = traj.states
    assert V is not None
    JV = sys.J @ V
    vnorms = np.linalg.norm(V, axis=0)
    jnorms = np.linalg.norm(JV, axis=0)
    assert np.all(jnorms <= 1e-10 * np.maximum(vnorms, 1e-12) + 1e-14)


# --- protocol runs ----------------------------------------------------------


def test_snapshot_run_401_equally_spaced_samples():
    n = 3
    sys = QuadraticSystem(M=sp.identity(n, format="csr"),
                          A=sp.diags([-1.0, -2.0, -3.0]).tocsr(),
                          N=BilinearOperator.zero(n),
                          B=np.ones((n, 1)), C=np.eye(n))
    cfg = SimConfig(dt=0.5 / 400, t_end=0.5, store_states=True)
    traj = run(sys, cfg)
    assert traj.times.size == 401
    assert np.allclose(traj.times, np.linspace(0.0, 0.5, 401))
    assert traj.states.shape == (n, 401)
    assert traj.u_norms[0] == 0.0  # sin(0)
    assert np.all(np.isfinite(traj.outputs))
    assert not traj.blowup and stabilized(traj) is False


def test_trajectory_csv_schema_and_determinism(tmp_path):
    sys = constrained_system(seed=4, nl_scale=0.01)
    cfg = SimConfig(dt=0.01, t_end=0.3, output_stride=3)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    run(sys, cfg).to_csv(p1)
    run(sys, cfg).to_csv(p2)
    assert p1.read_bytes() == p2.read_bytes()
    header = p1.read_text().splitlines()[0]
    assert header == "time,y_1,y_2,y_3,u_norm,blowup_flag"


def test_trajectory_csv_includes_scheduling_columns(tmp_path):
    from xsdre.pod import SnapshotSet, compute_pod

    n, r = 6, 2
    rng = np.random.default_rng(6)
    M = sp.identity(n, format="csr")
    sys = QuadraticSystem(M=M, A=(-sp.identity(n)).tocsr(),
                          N=BilinearOperator.zero(n),
                          B=rng.standard_normal((n, 2)),
                          C=rng.standard_normal((2, n)))
    basis = compute_pod(SnapshotSet(rng.standard_normal((n, 8)), M), r=r)
    ctrl = assemble(np.eye(n), [np.zeros((n, n))] * r, basis, sys.B, M, alpha=1.0)
    cfg = SimConfig(dt=0.01, t_end=0.1, t_c=0.0, controller=ctrl,
                    v0=rng.standard_normal(n))
    traj = run(sys, cfg)
    assert traj.r == r
    path = tmp_path / "t.csv"
    traj.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "time,y_1,y_2,u_norm,rho_1,rho_2,blowup_flag"


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0, t_end=1.0)
    with pytest.raises(ValueError):
        SimConfig(dt=0.1, t_end=-1.0)
    with pytest.raises(ValueError):
        SimConfig(dt=0.1, t_end=1.0, t_c=2.0)
    with pytest.raises(ValueError):
        SimConfig(dt=0.1, t_end=1.0, output_stride=0)
    cfg = SimConfig(dt=0.1, t_end=1.0)
    assert cfg.t_c == 1.0  # defaults to "never switch on"


def test_lqr_decay_rate_matches_closed_loop_abscissa():
    # diagonal plant, one actuator: closed-loop spectrum known to be
    # {-sqrt(a1^2+1), a2, a3, a4}; verify the simulated output decay
    # against a dense eigenvalue computation, not the formula
    n = 4
    M = sp.identity(n, format="csr")
    A = sp.diags([0.4, -1.0, -1.8, -2.5]).tocsr()
    B = np.array([[1.0], [0.0], [0.0], [0.0]])
    C = np.eye(n)
    sys = QuadraticSystem(M=M, A=A, N=BilinearOperator.zero(n), B=B, C=C)
    fac, report = solve_riccati(M, A, B, C)
    assert report.converged
    ctrl = assemble(fac, [], None, B, M, alpha=1.0)
    P = fac.to_dense()
    A_cl = A.toarray() - B @ (B.T @ P)
    abscissa = float(np.max(scipy.linalg.eigvals(A_cl).real))
    assert abscissa < 0
    v0 = np.array([0.3, 0.5, -0.2, 0.4])
    cfg = SimConfig(dt=0.004, t_end=8.0, t_c=0.0, controller=ctrl, v0=v0)
    traj = run(sys, cfg)
    norms = traj.output_norms()
    tail = traj.times >= 4.0
    slope = np.polyfit(traj.times[tail], np.log(norms[tail]), 1)[0]
    assert abs(slope - abscissa) <= 0.1 * abs(abscissa)


# --- switch-on bisection ----------------------------------------------------


def make_basin_setup():
    """v' = v + v^2 + u with LQR u = -(1+sqrt(2)) v: basin boundary sqrt(2)."""
    sys = scalar_system(1.0, 1.0)
    fac, _ = solve_riccati(sys.M, sys.A, sys.B, sys.C)
    P = fac.to_dense()
    assert abs(P[0, 0] - (1.0 + np.sqrt(2.0))) <= 1e-10
    ctrl = assemble(fac, [], None, sys.B, sys.M, alpha=1.0)
    cfg = SimConfig(dt=2e-3, t_end=16.0, v0=np.array([0.1]),
                    test_signal=TestSignal.zero())
    return sys, ctrl, cfg


def open_loop_crossing_time(v0, level):
    """Time at which v' = v + v^2, v(0) = v0 crosses the given level."""

    def hit(t, y):
        return y[0] - level

    hit.terminal = True
    sol = solve_ivp(lambda t, y: y + y**2, (0.0, 2.3), [v0], events=hit,
                    rtol=1e-11, atol=1e-13)
    return float(sol.t_events[0][0])


def test_find_critical_tc_matches_basin_crossing():
    sys, ctrl, cfg = make_basin_setup()
    t_star = open_loop_crossing_time(0.1, np.sqrt(2.0))
    # closed form: v/(1+v) = (v0/(1+v0)) e^t  =>  t* = log((2-sqrt(2))*11)
    assert abs(t_star - np.log((2.0 - np.sqrt(2.0)) * 11.0)) <= 1e-6
    result = find_critical_tc(sys, ctrl, lo=1.0, hi=2.2, tol=5e-3, cfg=cfg)
    assert result.t_hi - result.t_lo <= 5e-3
    assert abs(result.t_critical - t_star) <= 0.04
    assert result.history[0] == (1.0, True)
    assert result.history[1][0] == 2.2 and not result.history[1][1]


def test_find_critical_tc_bracket_errors():
    sys, ctrl, cfg = make_basin_setup()
    with pytest.raises(BracketError):
        find_critical_tc(sys, ctrl, lo=0.5, hi=0.5, tol=1e-2, cfg=cfg)
    with pytest.raises(BracketError, match="still stabilizes"):
        find_critical_tc(sys, ctrl, lo=0.05, hi=0.12, tol=1e-2, cfg=cfg)
    with pytest.raises(BracketError, match="does not stabilize"):
        find_critical_tc(sys, ctrl, lo=2.0, hi=2.2, tol=1e-2, cfg=cfg)


def test_blowup_is_flagged_not_raised(tmp_path):
    sys = scalar_system(1.0, 1.0)
    cfg = SimConfig(dt=1e-3, t_end=3.0, v0=np.array([0.1]),
                    test_signal=TestSignal.zero())
    with np.errstate(over="ignore", invalid="ignore"):
        traj = run(sys, cfg)
    assert traj.blowup
    # v' = v + v^2 from 0.1 escapes at t = log(11) ~ 2.398
    assert 2.2 <= traj.blowup_time <= 2.6
    assert traj.times[-1] == traj.blowup_time
    assert stabilized(traj) is False
    path = tmp_path / "b.csv"
    traj.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].endswith("blowup_flag")
    assert lines[-1].endswith(",1")


def test_closed_loop_divergence_trips_guard_without_overflow():
    # switch on too late: state is outside the basin, grows superexponentially
    sys, ctrl, _ = make_basin_setup()
    cfg = SimConfig(dt=2e-3, t_end=16.0, t_c=2.2, controller=ctrl,
                    v0=np.array([0.1]), test_signal=TestSignal.zero())
    traj = run(sys, cfg)
    assert traj.blowup
    assert np.all(np.isfinite(traj.outputs))
    assert traj.blowup_time < cfg.t_end
