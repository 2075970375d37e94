"""Domain types for branching Brownian motion inside an expanding ball.

Particles branch dyadically at rate beta while diffusing in d dimensions.
A particle is active at time t when the running maximum of its ancestral
radial distance is at most r(t); because r grows while the maximum is frozen
history, a lineage that stopped counting can count again later. The radius
schedule is subdiffusive (r unbounded, r(t) = o(sqrt t)) for the asymptotic
experiments; a constant radius is allowed for unit tests only.

Probability-scale quantities are carried in natural log space throughout:
e^{beta t} and e^{-kappa r(t)} span hundreds of orders of magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "RadiusSchedule",
    "ModelParams",
    "DeviationThreshold",
    "radius_at",
    "deviation_threshold",
    "default_dt",
]

_KINDS = ("power", "logarithmic", "fixed")


@dataclass(frozen=True)
class RadiusSchedule:
    """Ball radius as a function of time.

    kind "power": r(t) = coefficient * t**exponent with exponent in (0, 1/2),
    kind "logarithmic": r(t) = coefficient * log(1 + t),
    kind "fixed": r(t) = coefficient for all t.

    Power and logarithmic schedules are nondecreasing and unbounded; fixed
    violates that and is admitted only for unit-scale checks (the experiment
    recipes reject it).
    """

    kind: str
    coefficient: float
    exponent: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not (self.coefficient > 0):
            raise ValueError("schedule coefficient must be positive")
        if self.kind == "power":
            if self.exponent is None or not (0.0 < self.exponent < 0.5):
                raise ValueError("power exponent must lie in (0, 1/2)")
        elif self.exponent is not None:
            raise ValueError(f"{self.kind} schedule takes no exponent")

    @classmethod
    def power(cls, coefficient: float, exponent: float) -> "RadiusSchedule":
        return cls("power", float(coefficient), float(exponent))

    @classmethod
    def logarithmic(cls, coefficient: float) -> "RadiusSchedule":
        return cls("logarithmic", float(coefficient))

    @classmethod
    def fixed(cls, value: float) -> "RadiusSchedule":
        return cls("fixed", float(value))

    @property
    def unbounded(self) -> bool:
        return self.kind != "fixed"

    def radius_at(self, t: float) -> float:
        if t < 0:
            raise ValueError("time must be nonnegative")
        if self.kind == "power":
            return self.coefficient * t**self.exponent
        if self.kind == "logarithmic":
            return self.coefficient * math.log1p(t)
        return self.coefficient


def radius_at(schedule: RadiusSchedule, t: float) -> float:
    """Evaluate r(t); deterministic and nondecreasing for growing kinds."""
    return schedule.radius_at(t)


def default_dt(schedule: RadiusSchedule, t_first: float, t_max: float) -> float:
    """Step size resolving the smallest ball a run must cross.

    0.01 * r(t_first)^2 where t_first is the earliest observation time: the
    Brownian crossing scale of a ball of radius r is r^2, and the correction
    for within-step excursions handles the rest. Clamped to (0, t_max].
    """
    if not (0 < t_first <= t_max):
        raise ValueError("need 0 < t_first <= t_max")
    r = schedule.radius_at(t_first)
    return min(max(0.01 * r * r, 1e-9 * t_max), t_max)


@dataclass(frozen=True)
class ModelParams:
    """Immutable parameter bundle shared by simulations and estimators.

    branching_rate 0 is accepted (single-particle runs in unit tests); the
    CLI and the deviation machinery require a strictly positive rate.
    """

    dimension: int
    branching_rate: float
    kappa: float
    t_max: float
    radius: RadiusSchedule
    dt: float
    bridge_correction: bool = True

    def __post_init__(self) -> None:
        if not (isinstance(self.dimension, int) and self.dimension >= 1):
            raise ValueError("dimension must be an integer >= 1")
        if not (self.branching_rate >= 0):
            raise ValueError("branching rate must be nonnegative")
        if not (self.kappa > 0):
            raise ValueError("kappa must be positive")
        if not (self.t_max > 0):
            raise ValueError("t_max must be positive")
        if not (0 < self.dt <= self.t_max):
            raise ValueError("need 0 < dt <= t_max")

    @property
    def nu(self) -> float:
        """Index of the radial part, d/2 - 1."""
        return self.dimension / 2 - 1

    def radius_at(self, t: float) -> float:
        return self.radius.radius_at(t)

    def gamma_at(self, t: float) -> float:
        """Deviation factor gamma_t = exp(-kappa * r(t)), in (0, 1]."""
        return math.exp(self.log_gamma_at(t))

    def log_gamma_at(self, t: float) -> float:
        return -self.kappa * self.radius.radius_at(t)


@dataclass(frozen=True)
class DeviationThreshold:
    """Level gamma_t * p_t * e^{beta t} of the lower-deviation event.

    log_threshold is the authoritative composition; threshold is its
    exponential and may overflow to inf for extreme beta*t.
    """

    t: float
    gamma_t: float
    p_t: float
    threshold: float
    log_threshold: float

    def __post_init__(self) -> None:
        if not (0 < self.gamma_t <= 1):
            raise ValueError("gamma_t must lie in (0, 1]")
        if not (0 < self.p_t <= 1):
            raise ValueError("p_t must lie in (0, 1]")


def deviation_threshold(params: ModelParams, t: float, p_t: float) -> DeviationThreshold:
    """Compose the deviation level from kappa, r(t), the supplied p_t and beta*t."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    if not (0 < p_t <= 1):
        raise ValueError("p_t must lie in (0, 1]")
    log_gamma = params.log_gamma_at(t)
    log_threshold = log_gamma + math.log(p_t) + params.branching_rate * t
    try:
        threshold = math.exp(log_threshold)
    except OverflowError:
        threshold = math.inf
    return DeviationThreshold(
        t=t,
        gamma_t=math.exp(log_gamma),
        p_t=p_t,
        threshold=threshold,
        log_threshold=log_threshold,
    )
