"""Time integration: steady states, IMEX-Euler stepping, switch-on protocol.

The closed-loop experiment follows a fixed protocol: drive the system with a
test signal until the switch-on time t_c, then hand control to the feedback
law.  Stabilization succeeds when the output norm at the horizon has dropped
three orders of magnitude below its running peak.  A bisection over t_c
brackets the boundary of the feedback's domain of attraction in time.

The stepper treats the linear part and the constraint implicitly and the
quadratic term plus input explicitly:

    [[M - dt A, J^T], [J, 0]] (v+, dt p+) = (M v + dt (N(v,v) + B u + f), g)

One sparse factorization per (system, dt) pair, cached.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .arrayio import save_csv
from .feedback import SdreExpansion, evaluate
from .model import QuadraticSystem


class NewtonError(RuntimeError):
    """Steady-state Newton iteration diverged (try continuation in viscosity)."""


class BracketError(ValueError):
    """Bisection precondition violated: no stabilization sign change."""


@dataclass(frozen=True)
class TestSignal:
    """Open-loop excitation: amplitude * sin(frequency * t) on one channel."""

    __test__ = False  # not a pytest class despite the name

    amplitude: float = 1.0
    frequency: float = 1.0
    channel: int = 0

    def __call__(self, t: float, p: int) -> np.ndarray:
        u = np.zeros(p)
        if self.amplitude != 0.0:
            u[self.channel] = self.amplitude * np.sin(self.frequency * t)
        return u

    @classmethod
    def zero(cls) -> "TestSignal":
        return cls(amplitude=0.0)


@dataclass
class SimConfig:
    """Closed-loop experiment description.

    The test signal acts for t < t_c, the controller (when given) for
    t >= t_c.  Output samples are taken every ``output_stride`` steps.
    ``blowup_factor`` guards against divergence relative to the largest state
    norm seen in the open-loop phase.
    """

    dt: float
    t_end: float
    t_c: float | None = None
    test_signal: TestSignal | Callable = field(default_factory=TestSignal)
    controller: SdreExpansion | None = None
    output_stride: int = 1
    v0: np.ndarray | None = None
    blowup_factor: float = 1e6
    clamp: float | None = None
    store_states: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("time step must be positive")
        if self.t_end <= 0:
            raise ValueError("horizon must be positive")
        if self.t_c is None:
            self.t_c = self.t_end  # test signal throughout, no switch
        if not 0.0 <= self.t_c <= self.t_end:
            raise ValueError("switch-on time must lie in [0, t_end]")
        if self.output_stride < 1:
            raise ValueError("output stride must be at least 1")


class Trajectory:
    """Sampled closed-loop history with the terminal state.

    Rows of ``outputs`` and ``rho`` align with ``times``; ``u_norms`` holds
    the Euclidean norm of the input applied over the step starting at each
    sample time.  ``states`` is only populated on request (snapshot runs).
    """

    def __init__(self, times, outputs, u_norms, rho, v_end, blowup=False,
                 blowup_time=None, states=None):
        self.times = np.asarray(times, dtype=float)
        self.outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
        self.u_norms = np.asarray(u_norms, dtype=float)
        self.rho = np.asarray(rho, dtype=float).reshape(self.times.size, -1)
        self.v_end = np.asarray(v_end, dtype=float)
        self.blowup = bool(blowup)
        self.blowup_time = blowup_time
        self.states = states
        if not (self.times.size == self.outputs.shape[0] == self.u_norms.size):
            raise ValueError("sample columns misaligned")

    @property
    def q(self):
        return self.outputs.shape[1]

    @property
    def r(self):
        return self.rho.shape[1]

    def output_norms(self) -> np.ndarray:
        return np.linalg.norm(self.outputs, axis=1)

    def peak_output(self) -> float:
        return float(self.output_norms().max(initial=0.0))

    def final_output(self) -> float:
        return float(self.output_norms()[-1])

    def to_csv(self, path) -> None:
        cols = {"time": self.times}
        for j in range(self.q):
            cols[f"y_{j + 1}"] = self.outputs[:, j]
        cols["u_norm"] = self.u_norms
        for k in range(self.r):
            cols[f"rho_{k + 1}"] = self.rho[:, k]
        cols["blowup_flag"] = np.full(self.times.size, int(self.blowup))
        save_csv(path, cols)


class SteadyStateResult(NamedTuple):
    v: np.ndarray
    p: np.ndarray
    shifted: QuadraticSystem


def _steady_residual(sys: QuadraticSystem, v, p):
    res = sys.N.apply(v, v) + sys.A @ v
    if sys.f is not None:
        res = res + sys.f
    if sys.J is not None:
        res = res + sys.J.T @ p
    return res


def steady_state(sys: QuadraticSystem, tol: float = 1e-12, max_iter: int = 50,
                 v0=None, p0=None) -> SteadyStateResult:
    """Zero-input steady state by damped Newton, plus the shifted system.

    Solves N(v,v) + A v + J^T p + f = 0, J v = g.  The returned system has
    its origin moved to the steady state: the linear part picks up both
    coefficient matrices of N frozen at v_ss, the forcing drops out.
    ``v0``/``p0`` warm-start the iteration (parameter continuation).
    """
    n, n_p = sys.n, sys.n_p
    v = np.zeros(n) if v0 is None else np.asarray(v0, dtype=float).copy()
    p = np.zeros(n_p) if p0 is None else np.asarray(p0, dtype=float).copy()
    g = sys.g if sys.g is not None else np.zeros(n_p)

    def full_residual(v, p):
        top = _steady_residual(sys, v, p)
        if sys.J is None:
            return top
        return np.concatenate([top, sys.J @ v - g])

    res = full_residual(v, p)
    scale = max(np.linalg.norm(res), 1.0)
    for _ in range(max_iter):
        norm = np.linalg.norm(res)
        if norm <= tol * scale:
            break
        Jac = sys.A + sys.N.fix_first(v) + sys.N.fix_second(v)
        if sys.J is None:
            step = spla.spsolve(sp.csc_matrix(Jac), -res)
            dv, dp = step, np.zeros(0)
        else:
            K = sp.bmat([[Jac, sys.J.T], [sys.J, None]], format="csc")
            step = spla.splu(K).solve(-res)
            dv, dp = step[:n], step[n:]
        # backtracking damping on the residual norm
        lam = 1.0
        for _ in range(30):
            v_new, p_new = v + lam * dv, p + lam * dp
            res_new = full_residual(v_new, p_new)
            if np.linalg.norm(res_new) < (1.0 - 0.25 * lam) * norm:
                break
            lam *= 0.5
        else:
            raise NewtonError(
                "steady-state Newton stalled; consider parameter continuation "
                f"(residual {norm:.3e})"
            )
        v, p, res = v_new, p_new, res_new
    else:
        raise NewtonError(
            f"steady-state Newton did not converge in {max_iter} iterations "
            f"(residual {np.linalg.norm(res):.3e})"
        )
    shifted = QuadraticSystem(
        M=sys.M,
        A=sys.A + sys.N.fix_first(v) + sys.N.fix_second(v),
        N=sys.N,
        B=sys.B,
        C=sys.C,
        J=sys.J,
        meta=dict(sys.meta, shifted_from_steady_state=True),
    )
    return SteadyStateResult(v, p, shifted)


class ImexStepper:
    """Cached saddle factorization for repeated IMEX-Euler steps."""

    def __init__(self, sys: QuadraticSystem, dt: float):
        if dt <= 0:
            raise ValueError("time step must be positive")
        self.sys = sys
        self.dt = float(dt)
        lhs = sys.M - dt * sys.A
        if sys.J is not None:
            lhs = sp.bmat([[lhs, sys.J.T], [sys.J, None]], format="csc")
        else:
            lhs = sp.csc_matrix(lhs)
        try:
            self.lu = spla.splu(lhs)
        except RuntimeError as exc:
            raise RuntimeError(f"IMEX system factorization failed: {exc}") from exc
        self._g = sys.g if sys.g is not None else np.zeros(sys.n_p)

    def step(self, v, u):
        """One step; returns (v_plus, p_plus)."""
        sys = self.sys
        top = sys.M @ v + self.dt * (sys.N.apply(v, v) + sys.B @ u
                                     + (sys.f if sys.f is not None else 0.0))
        if sys.J is None:
            v_new = self.lu.solve(top)
            return v_new, np.zeros(0)
        sol = self.lu.solve(np.concatenate([top, self._g]))
        return sol[: sys.n], sol[sys.n:] / self.dt


_stepper_cache: "weakref.WeakKeyDictionary[QuadraticSystem, dict]" = (
    weakref.WeakKeyDictionary()
)


def imex_step(sys: QuadraticSystem, v, u, dt: float):
    """Single IMEX-Euler step with per-(system, dt) factorization caching."""
    per_sys = _stepper_cache.setdefault(sys, {})
    if dt not in per_sys:
        per_sys[dt] = ImexStepper(sys, dt)
    return per_sys[dt].step(v, u)


def run(sys: QuadraticSystem, cfg: SimConfig) -> Trajectory:
    """Integrate the switch-on protocol and sample the closed-loop history.

    Blow-up (state norm exceeding blowup_factor times the open-loop-phase
    reference) truncates the run and is flagged on the trajectory, not
    raised.
    """
    stepper = ImexStepper(sys, cfg.dt)
    n_steps = int(round(cfg.t_end / cfg.dt))
    v = np.zeros(sys.n) if cfg.v0 is None else np.asarray(cfg.v0, dtype=float)
    controller = cfg.controller
    r = 0 if controller is None else controller.r

    def input_at(t, v):
        if t < cfg.t_c:
            return np.atleast_1d(cfg.test_signal(t, sys.p))
        if controller is None:
            return np.zeros(sys.p)
        return evaluate(controller, v, clamp=cfg.clamp)

    times, outputs, u_norms, rhos, states = [], [], [], [], []

    def record(t, v, u):
        times.append(t)
        outputs.append(sys.C @ v)
        u_norms.append(np.linalg.norm(u))
        if r:
            rhos.append(controller.basis.encode(v))
        if cfg.store_states:
            states.append(v.copy())

    ref = max(np.linalg.norm(v), 0.0)
    blowup = False
    blowup_time = None
    u = input_at(0.0, v)
    record(0.0, v, u)
    for k in range(1, n_steps + 1):
        t_prev = (k - 1) * cfg.dt
        u = input_at(t_prev, v)
        v, _ = stepper.step(v, u)
        t = k * cfg.dt
        vnorm = np.linalg.norm(v)
        if t_prev < cfg.t_c:
            ref = max(ref, vnorm)
        if not np.isfinite(vnorm) or vnorm > cfg.blowup_factor * max(ref, 1e-12):
            blowup = True
            blowup_time = t
            record(t, v, u)
            break
        if k % cfg.output_stride == 0 or k == n_steps:
            record(t, v, input_at(t, v))
    rho_arr = (np.vstack(rhos) if rhos else np.zeros((len(times), 0)))
    return Trajectory(times, np.vstack(outputs), u_norms, rho_arr, v,
                      blowup=blowup, blowup_time=blowup_time,
                      states=np.column_stack(states) if states else None)


def stabilized(traj: Trajectory, threshold: float = 1e-3) -> bool:
    """Terminal output norm at least 1/threshold below the running peak."""
    if traj.blowup:
        return False
    peak = traj.peak_output()
    if peak == 0.0:
        return True
    return traj.final_output() <= threshold * peak


@dataclass
class BisectionResult:
    """Bracket of the critical switch-on time and the evaluation history."""

    t_lo: float           # largest tested t_c that stabilized
    t_hi: float           # smallest tested t_c that failed
    n_evals: int
    history: list         # (t_c, stabilized) pairs in evaluation order

    @property
    def t_critical(self) -> float:
        return 0.5 * (self.t_lo + self.t_hi)


def find_critical_tc(sys: QuadraticSystem, controller: SdreExpansion,
                     lo: float, hi: float, tol: float, cfg: SimConfig,
                     threshold: float = 1e-3) -> BisectionResult:
    """Bisect the switch-on time between stabilization and failure.

    Requires stabilized at lo and not at hi (monotonicity in t_c between the
    endpoints is assumed).  The returned bracket has width at most tol.
    """
    if not lo < hi:
        raise BracketError("need lo < hi")
    history = []

    def probe(t_c):
        c = SimConfig(dt=cfg.dt, t_end=cfg.t_end, t_c=t_c,
                      test_signal=cfg.test_signal, controller=controller,
                      output_stride=cfg.output_stride, v0=cfg.v0,
                      blowup_factor=cfg.blowup_factor, clamp=cfg.clamp)
        ok = stabilized(run(sys, c), threshold=threshold)
        history.append((t_c, ok))
        return ok

    if not probe(lo):
        raise BracketError(f"controller does not stabilize at t_c = {lo}")
    if probe(hi):
        raise BracketError(f"controller still stabilizes at t_c = {hi}; "
                           "no boundary inside the bracket")
    t_lo, t_hi = lo, hi
    while t_hi - t_lo > tol:
        mid = 0.5 * (t_lo + t_hi)
        if probe(mid):
            t_lo = mid
        else:
            t_hi = mid
    return BisectionResult(t_lo, t_hi, len(history), history)
