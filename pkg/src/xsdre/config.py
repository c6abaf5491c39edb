"""Experiment configuration files: flat ``key = value`` pairs under sections.

The format is INI as understood by :mod:`configparser`, with ``#`` or ``;``
inline comments.  List-valued keys take whitespace-separated entries; interval
entries use a colon (``0.2:0.3``).  Sections and keys:

``[benchmark]``
    kind        one of burgers | cylinder_fd | synthetic      (required)
    resolution  one int (burgers, synthetic) or two (cylinder) (required)
    reynolds    positive float                                  (required)
    seed        int, default 0
    actuators   optional list, entries ``lo:hi`` or ``i:j``
    sensors     optional list of floats

``[snapshots]``
    count       number of samples including endpoints, default 401
    window      length of the sampling interval, default 0.5
    amplitude / frequency / channel   test-signal parameters

``[reduction]``
    r_max       largest expansion order to precompute, default 10
    lambda      convex blend weight of the two coefficient routes, default 0.75
    r_list      optional explicit order list, default 0..r_max

``[feedback]``
    alphas      list of control penalties, default ``1``
    clamp       optional per-channel input saturation

``[mateq]``
    tol / adi_max_steps / newton_max_steps / dense_threshold
                matrix-equation solver controls
    probe_shifts  complex list (``0.05+4.9j``) seeding the unstable-eigenvalue
                  search for the stabilizing initialization
    factor_tol  relative truncation of the Riccati factor before the
                derivative solves, default 1e-8

``[simulation]``
    dt / t_end  step size and horizon                           (required)
    t_c         list of switch-on times        (this or ``bisect``, not both)
    bisect      ``lo hi tol`` bracket for the critical switch-on search
    output_stride / blowup_factor   sampling and divergence-guard controls

``[output]``
    directory   artifact root                                   (required)
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .bench import BenchmarkSpec
from .mateq import SolverOptions
from .sim import TestSignal


class ConfigError(ValueError):
    """Malformed or inconsistent configuration file."""


_KNOWN_KEYS = {
    "benchmark": {"kind", "resolution", "reynolds", "seed", "actuators",
                  "sensors"},
    "snapshots": {"count", "window", "amplitude", "frequency", "channel"},
    "reduction": {"r_max", "lambda", "r_list"},
    "feedback": {"alphas", "clamp"},
    "mateq": {"tol", "adi_max_steps", "newton_max_steps", "dense_threshold",
              "probe_shifts", "factor_tol"},
    "simulation": {"dt", "t_end", "t_c", "bisect", "output_stride",
                   "blowup_factor"},
    "output": {"directory"},
}


@dataclass(frozen=True)
class PipelineConfig:
    """Validated pipeline parameters; one instance drives one study."""

    benchmark: BenchmarkSpec
    out_dir: Path
    dt: float
    t_end: float
    snapshot_count: int = 401
    snapshot_window: float = 0.5
    signal_amplitude: float = 1.0
    signal_frequency: float = 1.0
    signal_channel: int = 0
    r_max: int = 10
    r_list: tuple = ()
    lam: float = 0.75
    alphas: tuple = (1.0,)
    clamp: float | None = None
    mateq_tol: float = 1e-7
    adi_max_steps: int = 300
    newton_max_steps: int = 30
    dense_threshold: int = 600
    probe_shifts: tuple = ()
    factor_tol: float = 1e-8
    t_c_list: tuple | None = None
    bisect: tuple | None = None
    output_stride: int = 1
    blowup_factor: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.r_max < 0:
            raise ConfigError(f"r_max must be nonnegative, got {self.r_max}")
        if not self.r_list:
            object.__setattr__(self, "r_list", tuple(range(self.r_max + 1)))
        rs = tuple(int(r) for r in self.r_list)
        if rs != tuple(sorted(set(rs))) or rs[0] < 0 or rs[-1] > self.r_max:
            raise ConfigError(
                f"r_list must be sorted distinct orders within [0, {self.r_max}]")
        object.__setattr__(self, "r_list", rs)
        if not self.alphas:
            raise ConfigError("at least one control penalty required")
        for a in self.alphas:
            if not a > 0:
                raise ConfigError(f"control penalties must be positive, got {a}")
        if not self.snapshot_window > 0:
            raise ConfigError("snapshot window must be positive")
        if self.snapshot_count < 2:
            raise ConfigError("at least two snapshots required")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"blend weight must be in [0, 1], got {self.lam}")
        if not self.dt > 0 or not self.t_end > 0:
            raise ConfigError("dt and t_end must be positive")
        if self.output_stride < 1:
            raise ConfigError("output stride must be at least 1")
        if not self.mateq_tol > 0 or not self.factor_tol > 0:
            raise ConfigError("solver tolerances must be positive")
        if self.clamp is not None and not self.clamp > 0:
            raise ConfigError("input saturation must be positive when given")
        if (self.t_c_list is None) == (self.bisect is None):
            raise ConfigError(
                "exactly one of 't_c' and 'bisect' must be configured")
        if self.t_c_list is not None:
            for t in self.t_c_list:
                if not 0 <= t <= self.t_end:
                    raise ConfigError(
                        f"switch-on time {t} outside [0, {self.t_end}]")
        if self.bisect is not None:
            lo, hi, tol = self.bisect
            if not (0 <= lo < hi <= self.t_end):
                raise ConfigError(
                    f"bisection bracket [{lo}, {hi}] must be ordered and "
                    f"inside [0, {self.t_end}]")
            if not tol > 0:
                raise ConfigError("bisection tolerance must be positive")

    @property
    def test_signal(self) -> TestSignal:
        return TestSignal(amplitude=self.signal_amplitude,
                          frequency=self.signal_frequency,
                          channel=self.signal_channel)

    @property
    def solver_options(self) -> SolverOptions:
        return SolverOptions(tol=self.mateq_tol,
                             adi_max_steps=self.adi_max_steps,
                             newton_max_steps=self.newton_max_steps,
                             dense_threshold=self.dense_threshold)

    @property
    def snapshot_dt(self) -> float:
        return self.snapshot_window / (self.snapshot_count - 1)


def _tokens(raw: str) -> list:
    return raw.replace(",", " ").split()


def _interval(tok: str):
    parts = tok.split(":")
    if len(parts) == 2:
        return (float(parts[0]), float(parts[1]))
    return float(tok)


def _get(parser, section, key, conv, default=None, required=False):
    if parser.has_option(section, key):
        raw = parser.get(section, key)
        try:
            return conv(raw)
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} "
                              f"({exc})") from exc
    if required:
        raise ConfigError(f"[{section}] {key} is required")
    return default


def load_config(path) -> PipelineConfig:
    """Parse and validate a pipeline configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser.options(section):
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")

    kind = _get(parser, "benchmark", "kind", str.strip, required=True)
    resolution = _get(parser, "benchmark", "resolution",
                      lambda s: tuple(int(t) for t in _tokens(s)),
                      required=True)
    spec_kwargs = dict(
        kind=kind,
        resolution=resolution,
        reynolds=_get(parser, "benchmark", "reynolds", float, required=True),
        seed=_get(parser, "benchmark", "seed", int, default=0),
    )
    actuators = _get(parser, "benchmark", "actuators",
                     lambda s: tuple(_interval(t) for t in _tokens(s)))
    sensors = _get(parser, "benchmark", "sensors",
                   lambda s: tuple(float(t) for t in _tokens(s)))
    if actuators is not None:
        spec_kwargs["actuators"] = actuators
    if sensors is not None:
        spec_kwargs["sensors"] = sensors
    try:
        spec = BenchmarkSpec(**spec_kwargs)
    except ValueError as exc:
        raise ConfigError(f"[benchmark] {exc}") from exc

    t_c_list = _get(parser, "simulation", "t_c",
                    lambda s: tuple(float(t) for t in _tokens(s)))
    bisect = _get(parser, "simulation", "bisect",
                  lambda s: tuple(float(t) for t in _tokens(s)))
    if bisect is not None and len(bisect) != 3:
        raise ConfigError("[simulation] bisect takes exactly 'lo hi tol'")

    return PipelineConfig(
        benchmark=spec,
        out_dir=Path(_get(parser, "output", "directory", str.strip,
                          required=True)),
        dt=_get(parser, "simulation", "dt", float, required=True),
        t_end=_get(parser, "simulation", "t_end", float, required=True),
        snapshot_count=_get(parser, "snapshots", "count", int, default=401),
        snapshot_window=_get(parser, "snapshots", "window", float,
                             default=0.5),
        signal_amplitude=_get(parser, "snapshots", "amplitude", float,
                              default=1.0),
        signal_frequency=_get(parser, "snapshots", "frequency", float,
                              default=1.0),
        signal_channel=_get(parser, "snapshots", "channel", int, default=0),
        r_max=_get(parser, "reduction", "r_max", int, default=10),
        r_list=_get(parser, "reduction", "r_list",
                    lambda s: tuple(int(t) for t in _tokens(s)),
                    default=()),
        lam=_get(parser, "reduction", "lambda", float, default=0.75),
        alphas=_get(parser, "feedback", "alphas",
                    lambda s: tuple(float(t) for t in _tokens(s)),
                    default=(1.0,)),
        clamp=_get(parser, "feedback", "clamp", float),
        mateq_tol=_get(parser, "mateq", "tol", float, default=1e-7),
        adi_max_steps=_get(parser, "mateq", "adi_max_steps", int,
                           default=300),
        newton_max_steps=_get(parser, "mateq", "newton_max_steps", int,
                              default=30),
        dense_threshold=_get(parser, "mateq", "dense_threshold", int,
                             default=600),
        probe_shifts=_get(parser, "mateq", "probe_shifts",
                          lambda s: tuple(complex(t) for t in _tokens(s)),
                          default=()),
        factor_tol=_get(parser, "mateq", "factor_tol", float, default=1e-8),
        t_c_list=t_c_list,
        bisect=bisect,
        output_stride=_get(parser, "simulation", "output_stride", int,
                           default=1),
        blowup_factor=_get(parser, "simulation", "blowup_factor", float,
                           default=1e6),
    )


def config_to_dict(cfg: PipelineConfig) -> dict:
    """JSON-ready view of a configuration, canonical enough to hash."""
    spec = cfg.benchmark
    return {
        "benchmark": {
            "kind": spec.kind,
            "resolution": list(spec.resolution),
            "reynolds": spec.reynolds,
            "seed": spec.seed,
            "actuators": [list(a) if isinstance(a, tuple) else a
                          for a in spec.actuators],
            "sensors": list(spec.sensors),
        },
        "snapshots": {
            "count": cfg.snapshot_count,
            "window": cfg.snapshot_window,
            "amplitude": cfg.signal_amplitude,
            "frequency": cfg.signal_frequency,
            "channel": cfg.signal_channel,
        },
        "reduction": {"r_max": cfg.r_max, "lambda": cfg.lam,
                      "r_list": list(cfg.r_list)},
        "feedback": {"alphas": list(cfg.alphas), "clamp": cfg.clamp},
        "mateq": {
            "tol": cfg.mateq_tol,
            "adi_max_steps": cfg.adi_max_steps,
            "newton_max_steps": cfg.newton_max_steps,
            "dense_threshold": cfg.dense_threshold,
            "probe_shifts": [str(s) for s in cfg.probe_shifts],
            "factor_tol": cfg.factor_tol,
        },
        "simulation": {
            "dt": cfg.dt,
            "t_end": cfg.t_end,
            "t_c": None if cfg.t_c_list is None else list(cfg.t_c_list),
            "bisect": None if cfg.bisect is None else list(cfg.bisect),
            "output_stride": cfg.output_stride,
            "blowup_factor": cfg.blowup_factor,
        },
    }


def config_hash(cfg: PipelineConfig) -> str:
    """Stable digest of everything that affects pipeline results.

    The output directory is deliberately excluded: moving a study must not
    invalidate its cache.
    """
    blob = json.dumps(config_to_dict(cfg), sort_keys=True,
                      separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
