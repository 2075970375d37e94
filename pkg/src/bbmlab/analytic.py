"""Closed-form and numerical quantities for the expanding-ball model.

The radial part of a d-dimensional Brownian motion is a Bessel process of
index nu = d/2 - 1, so confinement in a ball is governed by the Bessel
function J_nu and its first positive zero j_{nu,1}:

    lambda_d = j_{nu,1}^2 / 2         principal Dirichlet eigenvalue of
                                      -Laplacian/2 on the unit ball,
    P0(stay in B(0,b) up to t) ~ C_d exp(-j_{nu,1}^2 t / (2 b^2)),
    C_d = 2^{1-nu} j_{nu,1}^{nu-1} / (Gamma(nu+1) J_{nu+1}(j_{nu,1})).

The lower-deviation rate function of the active-particle count is
I(kappa) = min(kappa, sqrt(2 beta)); the two branches correspond to the
suppression strategy (no branching until the ball is large) and the escape
strategy (one linear-displacement excursion), the latter optimizing
beta k + 1/(2k) at k = 1/sqrt(2 beta). The variational form over the split
point rho of the horizon reproduces the same exponent.

J_nu is evaluated in-package: a power series up to x = 10 and Schlaefli's
integral representation beyond, accurate to ~1e-13 absolute on [0, 50] for
nu in [-1/2, 15]. Zeros come from bracketed bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

__all__ = [
    "BesselIndex",
    "Eigenvalue",
    "RateFunctionValue",
    "StrategyExponents",
    "VariationalSolution",
    "UnsupportedModeError",
    "bessel_j",
    "first_positive_zero",
    "second_positive_zero",
    "principal_eigenvalue",
    "eigenvalue",
    "confinement_center",
    "confinement_offcenter",
    "offcenter_coefficient",
    "offcenter_in_regime",
    "comparison_constant",
    "expected_mass",
    "rate_function",
    "strategy_exponents",
    "variational_minimize",
    "variational_profile",
]


class UnsupportedModeError(ValueError):
    """Requested evaluation mode is not available for these arguments."""


@dataclass(frozen=True)
class BesselIndex:
    """Index of the radial Bessel process, nu = d/2 - 1 >= -1/2."""

    nu: float

    def __post_init__(self) -> None:
        if not (self.nu >= -0.5):
            raise ValueError("index must be >= -1/2")

    @classmethod
    def from_dimension(cls, d: int) -> "BesselIndex":
        if not (isinstance(d, int) and d >= 1):
            raise ValueError("dimension must be an integer >= 1")
        return cls(d / 2 - 1)


@dataclass(frozen=True)
class Eigenvalue:
    """Principal Dirichlet eigenvalue of -Laplacian/2 on the unit ball."""

    lambda_d: float
    first_zero: float

    def __post_init__(self) -> None:
        if self.lambda_d != self.first_zero**2 / 2:
            raise ValueError("lambda_d must equal first_zero^2 / 2")


@dataclass(frozen=True)
class RateFunctionValue:
    kappa: float
    beta: float
    value: float

    def __post_init__(self) -> None:
        if self.value != min(self.kappa, math.sqrt(2 * self.beta)):
            raise ValueError("value must equal min(kappa, sqrt(2 beta))")


class StrategyExponents(NamedTuple):
    escape_exponent: float
    suppression_exponent: float
    optimal_k: float


class VariationalSolution(NamedTuple):
    rho_star: float
    upper_bound_exponent: float


def _nu_of(nu: float | BesselIndex) -> float:
    v = nu.nu if isinstance(nu, BesselIndex) else float(nu)
    if not (v >= -0.5):
        raise ValueError("index must be >= -1/2")
    return v


@lru_cache(maxsize=32)
def _gauss_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def _gauss_panel(f, a: float, b: float, n: int) -> float:
    x, w = _gauss_nodes(n)
    mid, half = (a + b) / 2, (b - a) / 2
    return half * float(np.sum(w * f(mid + half * x)))


def _bessel_series(nu: float, x: float) -> float:
    # converges fast for x <= 10; peak term ~ (x/2)^(2m)/(m!)^2 stays < ~7e2
    half = x / 2
    term = math.exp(nu * math.log(half) - math.lgamma(nu + 1)) if x > 0 else (
        1.0 if nu == 0 else (0.0 if nu > 0 else math.inf)
    )
    total = term
    q = half * half
    for m in range(1, 80):
        term *= -q / (m * (m + nu))
        total += term
        if abs(term) < 1e-18 * (1 + abs(total)):
            break
    return total


def _bessel_integral(nu: float, x: float) -> float:
    # Schlaefli: J_nu(x) = (1/pi) int_0^pi cos(nu*tau - x*sin(tau)) dtau
    #                      - sin(nu*pi)/pi int_0^inf e^{-x*sinh(s) - nu*s} ds
    osc = _gauss_panel(lambda tau: np.cos(nu * tau - x * np.sin(tau)), 0.0, math.pi, 256)
    s_nu_pi = math.sin(nu * math.pi)
    corr = 0.0
    if abs(s_nu_pi) > 1e-16:
        g = lambda s: np.exp(-x * np.sinh(s) - nu * s)
        corr = (
            _gauss_panel(g, 0.0, 0.4, 96)
            + _gauss_panel(g, 0.4, 1.2, 80)
            + _gauss_panel(g, 1.2, 2.8, 64)
        )
    return (osc - s_nu_pi * corr) / math.pi


def bessel_j(nu: float | BesselIndex, x: float) -> float:
    """J_nu(x) for nu >= -1/2, x >= 0; ~1e-13 absolute on [0, 50]."""
    v = _nu_of(nu)
    if x < 0:
        raise ValueError("argument must be nonnegative")
    if x <= 10.0:
        return _bessel_series(v, x)
    return _bessel_integral(v, x)


@lru_cache(maxsize=256)
def first_positive_zero(nu: float) -> float:
    """First positive zero j_{nu,1}, bisected to ~1e-12.

    Bracket [sqrt((nu+1)(nu+3)), sqrt(2(nu+1)(nu+3))] from the monotone
    growth of j_{nu,1} in nu; raises if the sign change is not there.
    """
    v = _nu_of(nu)
    lo = math.sqrt((v + 1) * (v + 3))
    hi = math.sqrt(2 * (v + 1) * (v + 3))
    f_lo, f_hi = bessel_j(v, lo), bessel_j(v, hi)
    if not (f_lo > 0 > f_hi):
        raise RuntimeError(
            f"no sign change for J_{v} on bracket [{lo:.6g}, {hi:.6g}]: "
            f"({f_lo:.3g}, {f_hi:.3g})"
        )
    while hi - lo > 5e-13 * max(1.0, lo):
        mid = (lo + hi) / 2
        if bessel_j(v, mid) > 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


@lru_cache(maxsize=256)
def second_positive_zero(nu: float) -> float:
    """Second positive zero j_{nu,2}, by outward scan plus bisection."""
    v = _nu_of(nu)
    j1 = first_positive_zero(v)
    lo = j1 + 0.25
    step = 0.25 * max(1.0, j1)
    hi = lo + step
    # J is negative just past j1; scan until it turns positive again
    while bessel_j(v, lo) >= 0:
        lo += 0.05
    for _ in range(200):
        if bessel_j(v, hi) > 0:
            break
        lo, hi = hi, hi + step
    else:
        raise RuntimeError(f"no second zero found for J_{v}")
    while hi - lo > 5e-13 * hi:
        mid = (lo + hi) / 2
        if bessel_j(v, mid) < 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def eigenvalue(d: int) -> Eigenvalue:
    j1 = first_positive_zero(BesselIndex.from_dimension(d).nu)
    return Eigenvalue(lambda_d=j1**2 / 2, first_zero=j1)


def principal_eigenvalue(d: int, radius: float = 1.0) -> float:
    """j_{nu,1}^2 / (2 radius^2) with nu = d/2 - 1."""
    if not (radius > 0):
        raise ValueError("radius must be positive")
    return eigenvalue(d).lambda_d / radius**2


def _center_coefficient(d: int) -> float:
    nu = BesselIndex.from_dimension(d).nu
    j1 = first_positive_zero(nu)
    return (
        math.exp((1 - nu) * math.log(2) + (nu - 1) * math.log(j1) - math.lgamma(nu + 1))
        / bessel_j(nu + 1, j1)
    )


def _series_center_1d(tau: float) -> float:
    # tau = t / b^2. Eigenfunction series for moderate/large tau, reflection
    # (erf) form for small tau; both exact, picked for convergence speed.
    if tau >= 0.35:
        total = 0.0
        for n in range(0, 200):
            odd = 2 * n + 1
            term = (4 / (odd * math.pi)) * math.exp(-(odd**2) * math.pi**2 * tau / 8)
            total += term if n % 2 == 0 else -term
            if term < 1e-17:
                break
        return total
    theta = 1 / math.sqrt(tau)
    phi = lambda z: 0.5 * (1 + math.erf(z / math.sqrt(2)))
    total = math.erf(theta / math.sqrt(2))
    for k in range(1, 60):
        term = 2 * (phi((2 * k + 1) * theta) - phi((2 * k - 1) * theta))
        total += -term if k % 2 == 1 else term
        if abs(term) < 1e-18:
            break
    return total


def confinement_center(
    d: int,
    b: float,
    t: float,
    mode: str = "leading_term",
    *,
    replicates: int = 100_000,
    seed: int = 0,
    dt: float | None = None,
    bridge: bool = True,
) -> float:
    """P(a Brownian path from the center stays inside B(0,b) up to t).

    leading_term: the large-t asymptotic C_d exp(-j^2 t/(2 b^2)) (can exceed
    1 for small t; not clipped). series: exact expansion, d=1 only.
    monte_carlo: single-path simulation with the bridge crossing correction.
    """
    if not (b > 0) or t < 0:
        raise ValueError("need b > 0 and t >= 0")
    if t == 0:
        return 1.0
    if mode == "leading_term":
        j1 = first_positive_zero(BesselIndex.from_dimension(d).nu)
        return _center_coefficient(d) * math.exp(-(j1**2) * t / (2 * b * b))
    if mode == "series":
        if d != 1:
            raise UnsupportedModeError(f"series mode is implemented for d=1 only, got d={d}")
        return _series_center_1d(t / (b * b))
    if mode == "monte_carlo":
        from .engine.singlepath import confinement_probability_mc

        if dt is None:
            dt = 0.01 * b * b
        return confinement_probability_mc(
            d, b, t, replicates=replicates, seed=seed, dt=dt, bridge=bridge
        ).value
    raise UnsupportedModeError(f"unknown mode {mode!r}")


def offcenter_coefficient(d: int, ratio: float) -> float:
    """Leading coefficient of the off-center confinement asymptotic.

    Start at distance a = ratio*b from the center: the t-independent factor
    2 (b/a)^nu J_nu(j ratio) / (j J_{nu+1}(j)); positive and decreasing in
    ratio on (0,1) because J_nu is positive below its first zero.
    """
    if not (0 < ratio < 1):
        raise ValueError("ratio must lie in (0, 1)")
    nu = BesselIndex.from_dimension(d).nu
    j1 = first_positive_zero(nu)
    return 2 * ratio**-nu * bessel_j(nu, j1 * ratio) / (j1 * bessel_j(nu + 1, j1))


def confinement_offcenter(d: int, a: float, b: float, t: float) -> float:
    """Leading-order P(path from |x|=a stays inside B(0,b) up to t), a < b.

    Asymptotic in t; see offcenter_in_regime for the onset heuristic.
    Invariant under Brownian scaling (a,b,t) -> (c a, c b, c^2 t).
    """
    if not (0 < a < b):
        raise ValueError("need 0 < a < b")
    if t < 0:
        raise ValueError("time must be nonnegative")
    nu = BesselIndex.from_dimension(d).nu
    j1 = first_positive_zero(nu)
    return offcenter_coefficient(d, a / b) * math.exp(-(j1**2) * t / (2 * b * b))


def offcenter_in_regime(d: int, b: float, t: float) -> bool:
    """Heuristic onset of the one-mode asymptotic: the second mode has
    decayed by a factor e relative to the first."""
    nu = BesselIndex.from_dimension(d).nu
    j1, j2 = first_positive_zero(nu), second_positive_zero(nu)
    return t >= 2 * b * b / (j2**2 - j1**2)


def comparison_constant(d: int, ratio: float) -> float:
    """Ratio of center to off-center leading coefficients.

    Equals (j ratio / 2)^nu / (Gamma(nu+1) J_nu(j ratio)); bounds the
    probability ratio for large t (the exponential factors cancel) and
    tends to 1 as ratio -> 0.
    """
    if not (0 < ratio < 1):
        raise ValueError("ratio must lie in (0, 1)")
    nu = BesselIndex.from_dimension(d).nu
    x = first_positive_zero(nu) * ratio
    return math.exp(nu * math.log(x / 2) - math.lgamma(nu + 1)) / bessel_j(nu, x)


def expected_mass(params, t: float, p_t: float) -> float:
    """log E[active count at t] = log p_t + beta t (many-to-one identity)."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    if not (0 < p_t <= 1):
        raise ValueError("p_t must lie in (0, 1]")
    return math.log(p_t) + params.branching_rate * t


def rate_function(kappa: float, beta: float) -> RateFunctionValue:
    """Lower-deviation rate I(kappa) = min(kappa, sqrt(2 beta))."""
    if not (kappa > 0 and beta > 0):
        raise ValueError("kappa and beta must be positive")
    return RateFunctionValue(kappa=kappa, beta=beta, value=min(kappa, math.sqrt(2 * beta)))


def strategy_exponents(kappa: float, beta: float) -> StrategyExponents:
    """Exponents of the two deviation strategies.

    Escape: one particle makes a linear excursion; cost beta k + 1/(2k) per
    unit radius, minimized at k = 1/sqrt(2 beta) giving sqrt(2 beta).
    Suppression: no branching while the ball grows; cost kappa.
    """
    if not (kappa > 0 and beta > 0):
        raise ValueError("kappa and beta must be positive")
    root = math.sqrt(2 * beta)
    return StrategyExponents(
        escape_exponent=root, suppression_exponent=kappa, optimal_k=1 / root
    )


def variational_profile(rho: float, kappa: float, beta: float) -> float:
    """Objective rho*kappa/beta + 1/(2*kappa*rho) over the split point rho."""
    if not (rho > 0):
        raise ValueError("rho must be positive")
    return rho * kappa / beta + 1 / (2 * kappa * rho)


def variational_minimize(kappa: float, beta: float) -> VariationalSolution:
    """Minimize the split-point objective; the exponent always equals I(kappa).

    The unconstrained minimizer is rho_bar = sqrt(beta / (2 kappa^2)) with
    value sqrt(2/beta); when kappa <= sqrt(2 beta) the direct branch kappa/beta
    wins and the returned exponent is kappa (rho_star clipped into (0, 1]).
    """
    if not (kappa > 0 and beta > 0):
        raise ValueError("kappa and beta must be positive")
    root = math.sqrt(2 * beta)
    rho_bar = math.sqrt(beta / 2) / kappa
    if kappa > root:
        return VariationalSolution(rho_star=rho_bar, upper_bound_exponent=root)
    return VariationalSolution(rho_star=min(rho_bar, 1.0), upper_bound_exponent=kappa)
