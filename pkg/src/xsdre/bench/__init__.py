"""Desk-scale benchmark generators.

Three families: a 1D viscous Burgers validation problem (no constraint), a
2D staggered-grid channel with a masked square obstacle (the incompressible
constrained case), and seeded synthetic instances for solver oracles.  All
generators are pure functions of (spec, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DESK_CAP = 50_000  # hard ceiling on state dimension for any generated system

_KINDS = ("burgers", "cylinder_fd", "synthetic")


@dataclass(frozen=True)
class BenchmarkSpec:
    """Description of a generated benchmark instance.

    ``resolution`` is (n,) for 1D kinds and (nx, ny) for the channel;
    ``reynolds`` sets the viscosity nu = 1/reynolds.  Actuator and sensor
    placements are kind-specific descriptors; empty tuples select the
    documented defaults.
    """

    kind: str
    resolution: tuple
    reynolds: float
    actuators: tuple = ()
    sensors: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown benchmark kind {self.kind!r}")
        res = tuple(int(r) for r in np.atleast_1d(np.asarray(self.resolution)))
        object.__setattr__(self, "resolution", res)
        if any(r < 3 for r in res):
            raise ValueError("resolution must be at least 3 in every direction")
        if not np.isfinite(self.reynolds) or self.reynolds <= 0:
            raise ValueError("Reynolds parameter must be positive")
        object.__setattr__(self, "actuators", tuple(self.actuators))
        object.__setattr__(self, "sensors", tuple(self.sensors))


def _check_cap(n: int) -> None:
    if n > DESK_CAP:
        raise ValueError(f"state dimension {n} exceeds the desk cap {DESK_CAP}")


from .burgers import make_burgers  # noqa: E402
from .cylinder import make_cylinder_fd  # noqa: E402
from .synthetic import make_synthetic  # noqa: E402


def make_benchmark(spec: BenchmarkSpec, **kwargs):
    """Dispatch on spec.kind."""
    maker = {
        "burgers": make_burgers,
        "cylinder_fd": make_cylinder_fd,
        "synthetic": make_synthetic,
    }[spec.kind]
    return maker(spec, **kwargs)


__all__ = [
    "DESK_CAP", "BenchmarkSpec", "make_benchmark",
    "make_burgers", "make_cylinder_fd", "make_synthetic",
]
