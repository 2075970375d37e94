"""Replicate-level Monte Carlo estimators and the decay-rate regression.

Everything here reduces engine output to numbers with uncertainties: the
expected active mass, the lower-deviation probability (naive and
stratified over the initial particle's first branch time), the least-squares
decay rate of that probability against the radius, and the distribution of
the mass-correction statistic r(t)^2 (log n_t / t - beta).

Every estimator is deterministic in (arguments, seed): each Monte Carlo use
runs on its own named stream, so e.g. the stratified and naive estimators
can be compared without sharing draws, while a kappa sweep at fixed seed
reuses the same trees on purpose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analytic import principal_eigenvalue
from .engine import (
    STREAM_COUNT_LAW,
    STREAM_LLN,
    STREAM_MASS,
    STREAM_NAIVE,
    STREAM_STRATUM_EARLY,
    STREAM_STRATUM_QUIET,
    BudgetExceededError,
    StrategyCondition,
    confinement_probability_mc,
    sample_counts,
)
from .model import ModelParams, RadiusSchedule, deviation_threshold

__all__ = [
    "Estimate",
    "DecayFit",
    "LLNSummary",
    "estimate_ld_probability",
    "estimate_expected_mass",
    "fit_decay_rate",
    "lln_statistic",
    "lln_trend",
    "lln_value",
    "prop_a_distribution_test",
]

_MODES = ("naive", "stratified")


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo point estimate with its standard error.

    value is linear-space for probabilities and counts. zero_hit marks
    estimates whose hit count was zero; upper_bound then carries a
    one-sided 95% Clopper-Pearson-style bound instead of the (degenerate)
    standard error. detail holds estimator-specific extras.
    """

    value: float
    std_error: float
    replicates: int
    mode: str
    zero_hit: bool = False
    upper_bound: float | None = None
    detail: dict | None = None

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise ValueError(f"unknown estimator mode {self.mode!r}")
        if not (math.isfinite(self.std_error) and self.std_error >= 0):
            raise ValueError("standard error must be finite and nonnegative")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")


@dataclass(frozen=True)
class DecayFit:
    """Least-squares decay rate of a probability against the radius.

    Fits -log(prob) = slope * r - intercept, so log(prob) = intercept
    - slope * r and slope is the empirical decay rate per unit radius.
    points stores the (r, log_prob) pairs actually fitted.
    """

    points: tuple[tuple[float, float], ...]
    slope: float
    intercept: float
    r_squared: float
    slope_se: float

    def __post_init__(self) -> None:
        if not (0 <= self.r_squared <= 1):
            raise ValueError("r_squared must lie in [0, 1]")


def _binomial_se(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n)


def _zero_hit_bound(n: int) -> float:
    # one-sided 95% upper bound for a probability after n misses
    return 1.0 - 0.05 ** (1.0 / n)


def _active_at(params, t, replicates, seed, condition, stream_tag, threads, max_live):
    _, actives, truncated = sample_counts(
        params,
        [t],
        replicates,
        seed,
        condition=condition,
        stream_tag=stream_tag,
        threads=threads,
        max_live=max_live,
    )
    if truncated.any():
        raise BudgetExceededError(
            f"{int(truncated.sum())} of {replicates} replicates passed the live-particle cap"
        )
    return actives[:, 0]


def _check_budget(params: ModelParams, t: float, max_live: int) -> None:
    if params.branching_rate * t > math.log(max_live):
        raise BudgetExceededError(
            "expected particle count exp(beta*t) exceeds the live-particle cap"
        )


def estimate_ld_probability(
    params: ModelParams,
    t: float,
    replicates: int,
    seed: int,
    mode: str = "stratified",
    *,
    p_t: Estimate | None = None,
    threads: int | None = 1,
    max_live: int = 2**22,
) -> Estimate:
    """P(n_t < gamma_t * p_t * e^{beta t}), the lower-deviation probability.

    The threshold needs the confinement probability p_t, which is itself
    estimated first (or passed in, so a kappa sweep at fixed t can share
    one estimate); its uncertainty enters the reported standard error by
    re-counting at the threshold shifted one p_t-standard-error up and down.

    naive mode takes the plain hit fraction. stratified mode splits on
    whether the initial particle branches before T0 = (kappa r(t) + log 2)
    / beta: the no-branch stratum has exact probability e^{-beta T0} =
    gamma_t / 2 and carries most of the deviation event, so sampling it
    directly at half the budget sharpens the rare tail; both strata are
    simulated under their exact conditional laws, which keeps the split
    unbiased. Zero-hit strata are flagged, with a one-sided 95% upper
    bound alongside the point estimate.
    """
    if mode not in _MODES:
        raise ValueError(f"unknown estimator mode {mode!r}")
    if replicates < 2:
        raise ValueError("need at least two replicates")
    if not (0 < t <= params.t_max):
        raise ValueError("need 0 < t <= t_max")
    beta = params.branching_rate
    if mode == "stratified" and not (beta > 0):
        raise ValueError("stratified mode needs a positive branching rate")
    _check_budget(params, t, max_live)

    if p_t is None:
        p_t = confinement_probability_mc(
            params.dimension,
            params.radius_at(t),
            t,
            max(50_000, replicates),
            seed,
            dt=params.dt,
            bridge=params.bridge_correction,
            threads=threads,
        )
    if not (p_t.value > 0):
        raise ValueError(
            "confinement estimate is zero; raise its replicate count before thresholding"
        )
    level = deviation_threshold(params, t, p_t.value)
    # thresholds at p_t shifted by one SE, for error propagation by re-count
    shift = p_t.std_error / p_t.value
    thr, thr_lo, thr_hi = (
        level.threshold,
        level.threshold * math.exp(-shift),
        level.threshold * math.exp(shift),
    )

    detail: dict = {
        "threshold": level.threshold,
        "log_threshold": level.log_threshold,
        "gamma_t": level.gamma_t,
        "p_t": p_t.value,
        "p_t_std_error": p_t.std_error,
    }

    if mode == "naive":
        n = _active_at(params, t, replicates, seed, None, STREAM_NAIVE, threads, max_live)
        hats = [float(np.mean(n < cut)) for cut in (thr, thr_lo, thr_hi)]
        p_hat = hats[0]
        se = math.hypot(_binomial_se(p_hat, replicates), 0.5 * (hats[2] - hats[1]))
        detail["hits"] = int(np.count_nonzero(n < thr))
        return Estimate(
            value=p_hat,
            std_error=se,
            replicates=replicates,
            mode=mode,
            zero_hit=(p_hat == 0.0),
            upper_bound=_zero_hit_bound(replicates) if p_hat == 0.0 else None,
            detail=detail,
        )

    t0 = (params.kappa * params.radius_at(t) + math.log(2.0)) / beta
    w_quiet = math.exp(-beta * t0)  # equals gamma_t / 2 exactly
    w_early = 1.0 - w_quiet
    n_quiet = replicates // 2
    n_early = replicates - n_quiet
    quiet = _active_at(
        params,
        t,
        n_quiet,
        seed,
        StrategyCondition("no_branch_until", t0),
        STREAM_STRATUM_QUIET,
        threads,
        max_live,
    )
    early = _active_at(
        params,
        t,
        n_early,
        seed,
        StrategyCondition("branch_before", t0),
        STREAM_STRATUM_EARLY,
        threads,
        max_live,
    )

    def combined(cut: float) -> float:
        return w_quiet * float(np.mean(quiet < cut)) + w_early * float(np.mean(early < cut))

    pq, pe = float(np.mean(quiet < thr)), float(np.mean(early < thr))
    p_hat = w_quiet * pq + w_early * pe
    se_strata = math.sqrt(
        w_quiet**2 * pq * (1.0 - pq) / n_quiet + w_early**2 * pe * (1.0 - pe) / n_early
    )
    se = math.hypot(se_strata, 0.5 * (combined(thr_hi) - combined(thr_lo)))
    zero = (pq == 0.0) or (pe == 0.0)
    upper = None
    if zero:
        upper = p_hat
        if pq == 0.0:
            upper += w_quiet * _zero_hit_bound(n_quiet)
        if pe == 0.0:
            upper += w_early * _zero_hit_bound(n_early)
    detail.update(
        {
            "t0": t0,
            "weight_quiet": w_quiet,
            "quiet_estimate": pq,
            "early_estimate": pe,
            "quiet_replicates": n_quiet,
            "early_replicates": n_early,
        }
    )
    return Estimate(
        value=p_hat,
        std_error=se,
        replicates=replicates,
        mode=mode,
        zero_hit=zero,
        upper_bound=upper,
        detail=detail,
    )


def estimate_expected_mass(
    params: ModelParams,
    t: float,
    replicates: int,
    seed: int,
    *,
    threads: int | None = 1,
    max_live: int = 2**22,
) -> Estimate:
    """Sample mean of the active count n_t, with its standard error.

    detail carries log_mean = log of the sample mean (the scale on which
    the mass identity E[n_t] = p_t e^{beta t} is usually read) and the
    mean total count for reference.
    """
    if replicates < 1:
        raise ValueError("need at least one replicate")
    if not (0 <= t <= params.t_max):
        raise ValueError("need 0 <= t <= t_max")
    _check_budget(params, t, max_live)
    totals, actives, truncated = sample_counts(
        params, [t], replicates, seed, stream_tag=STREAM_MASS, threads=threads, max_live=max_live
    )
    if truncated.any():
        raise BudgetExceededError(
            f"{int(truncated.sum())} of {replicates} replicates passed the live-particle cap"
        )
    n = actives[:, 0].astype(np.float64)
    mean = float(n.mean())
    se = float(n.std(ddof=1) / math.sqrt(replicates)) if replicates > 1 else 0.0
    return Estimate(
        value=mean,
        std_error=se,
        replicates=replicates,
        mode="naive",
        zero_hit=(mean == 0.0),
        detail={
            "log_mean": math.log(mean) if mean > 0 else -math.inf,
            "mean_total": float(totals[:, 0].mean()),
        },
    )


def fit_decay_rate(points, *, std_errors=None) -> DecayFit:
    """Ordinary least squares of -log(prob) against r.

    points is a sequence of (r, prob) pairs, at least three, with all
    probabilities strictly positive (a zero estimate has no log; raise the
    replicate count until the event is seen). Optional std_errors (of the
    probabilities, linear space) propagate into slope_se; without them
    slope_se falls back to the residual-based formula.
    """
    pts = [(float(r), float(p)) for r, p in points]
    if len(pts) < 3:
        raise ValueError("need at least three (r, prob) points")
    for r, p in pts:
        if not (p > 0):
            raise ValueError(
                f"probability estimate at r={r} is not positive; "
                "raise the replicate count until the event is observed"
            )
    r = np.array([q[0] for q in pts])
    y = -np.log([q[1] for q in pts])
    if np.ptp(r) == 0:
        raise ValueError("all radii are equal; the slope is undefined")
    r_bar = r.mean()
    sxx = float(((r - r_bar) ** 2).sum())
    w = (r - r_bar) / sxx
    slope = float(w @ y)
    a = float(y.mean() - slope * r_bar)  # -log p = a + slope * r
    fitted = a + slope * r
    ss_res = float(((y - fitted) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    if std_errors is not None:
        se_log = np.asarray(std_errors, dtype=np.float64) / np.array([q[1] for q in pts])
        if se_log.shape != r.shape:
            raise ValueError("std_errors must align with points")
        slope_se = float(np.sqrt((w**2) @ (se_log**2)))
    else:
        dof = len(pts) - 2
        slope_se = math.sqrt(ss_res / dof / sxx) if dof > 0 else math.inf
    return DecayFit(
        points=tuple((float(ri), float(-yi)) for ri, yi in zip(r, y)),
        slope=slope,
        intercept=-a,
        r_squared=r2,
        slope_se=slope_se,
    )


@dataclass(frozen=True)
class LLNSummary:
    """Distribution summary of r(t)^2 (log n_t / t - beta) at one time.

    Runs with n_t = 0 enter as -inf (log undefined), are counted in
    zero_fraction, and are never dropped: the median and IQR are over all
    runs, with the zero-free versions alongside. unreliable is set when
    more than 20% of runs died.
    """

    t: float
    radius: float
    target: float  # -lambda_d for the model's dimension
    epsilon: float
    median: float
    iqr: float
    median_nonzero: float
    iqr_nonzero: float
    within_fraction: float
    zero_fraction: float
    replicates: int
    unreliable: bool
    statistics: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if not (0 <= self.zero_fraction <= 1):
            raise ValueError("zero_fraction must lie in [0, 1]")


def lln_value(params: ModelParams, t: float, n: float) -> float:
    """The statistic r(t)^2 (log(n)/t - beta) for one count; -inf at n=0."""
    if n < 0:
        raise ValueError("counts are nonnegative")
    if t <= 0:
        raise ValueError("need t > 0")
    r = params.radius_at(t)
    if n == 0:
        return -math.inf
    return r * r * (math.log(n) / t - params.branching_rate)


def _quartiles(x: np.ndarray) -> tuple[float, float]:
    if x.size == 0:
        return math.nan, math.nan
    if np.isneginf(x).any():
        # interpolating across -inf gives nan; fall back to order statistics
        q1, q2, q3 = np.quantile(x, [0.25, 0.5, 0.75], method="inverted_cdf")
    else:
        q1, q2, q3 = np.percentile(x, [25.0, 50.0, 75.0])
    return float(q2), float(q3 - q1)


def lln_trend(
    params: ModelParams,
    times,
    replicates: int,
    seed: int,
    *,
    epsilon: float | None = None,
    threads: int | None = 1,
    max_live: int = 2**22,
) -> list[LLNSummary]:
    """LLN summaries at several times from one coupled batch of runs.

    Each replicate is observed at every requested time, so the summaries
    move together and the drift of the median toward -lambda_d is not
    drowned by independent resampling noise.
    """
    times = np.asarray(times, dtype=np.float64)
    if replicates < 100:
        raise ValueError("need at least 100 replicates for a distribution summary")
    if times.size == 0 or np.any(times <= 0):
        raise ValueError("observation times must be positive")
    _check_budget(params, float(times[-1]), max_live)
    lam = principal_eigenvalue(params.dimension)
    eps = (0.4 * lam) if epsilon is None else float(epsilon)
    if not (eps > 0):
        raise ValueError("epsilon must be positive")
    _, actives, truncated = sample_counts(
        params, times, replicates, seed, stream_tag=STREAM_LLN, threads=threads, max_live=max_live
    )
    if truncated.any():
        raise BudgetExceededError(
            f"{int(truncated.sum())} of {replicates} replicates passed the live-particle cap"
        )
    out = []
    for j, t in enumerate(times):
        n = actives[:, j].astype(np.float64)
        r = params.radius_at(float(t))
        with np.errstate(divide="ignore"):
            stats = r * r * (np.log(n) / t - params.branching_rate)
        zero_fraction = float(np.mean(n == 0))
        median, iqr = _quartiles(stats)
        median_nz, iqr_nz = _quartiles(stats[n > 0])
        out.append(
            LLNSummary(
                t=float(t),
                radius=r,
                target=-lam,
                epsilon=eps,
                median=median,
                iqr=iqr,
                median_nonzero=median_nz,
                iqr_nonzero=iqr_nz,
                within_fraction=float(np.mean(np.abs(stats + lam) <= eps)),
                zero_fraction=zero_fraction,
                replicates=replicates,
                unreliable=(zero_fraction > 0.20),
                statistics=stats,
            )
        )
    return out


def lln_statistic(
    params: ModelParams,
    t: float,
    replicates: int,
    seed: int,
    *,
    epsilon: float | None = None,
    threads: int | None = 1,
    max_live: int = 2**22,
) -> LLNSummary:
    """Distribution summary of r(t)^2 (log n_t / t - beta) at a single time."""
    return lln_trend(
        params, [t], replicates, seed, epsilon=epsilon, threads=threads, max_live=max_live
    )[0]


def prop_a_distribution_test(
    beta: float,
    t: float,
    replicates: int,
    seed: int,
    *,
    threads: int | None = 1,
) -> tuple[float, bool]:
    """Empirical law of the total count N_t against the geometric law.

    Returns (tv_distance, tail_check): the total-variation distance between
    the empirical distribution of N_t and the geometric law with success
    probability e^{-beta t} (probability mass beyond the largest observed
    count enters the distance in full), and whether the empirical
    P(N_t > 10) is within three standard errors of (1 - e^{-beta t})^10.
    Only the branching skeleton is sampled; no motion is involved.
    """
    if beta < 0:
        raise ValueError("branching rate must be nonnegative")
    if t < 0:
        raise ValueError("time must be nonnegative")
    if replicates < 1:
        raise ValueError("need at least one replicate")
    horizon = max(t, 1.0)
    params = ModelParams(
        dimension=1,
        branching_rate=beta,
        kappa=1.0,
        t_max=horizon,
        radius=RadiusSchedule.fixed(1.0),
        dt=horizon,
        bridge_correction=False,
    )
    if beta * t > math.log(2**22):
        raise BudgetExceededError("expected count exp(beta*t) exceeds the live-particle cap")
    totals, _, truncated = sample_counts(
        params,
        [t],
        replicates,
        seed,
        stream_tag=STREAM_COUNT_LAW,
        threads=threads,
        skeleton_only=True,
    )
    if truncated.any():
        raise BudgetExceededError(
            f"{int(truncated.sum())} of {replicates} replicates passed the live-particle cap"
        )
    counts = totals[:, 0]
    p = math.exp(-beta * t)
    k_max = int(counts.max())
    empirical = np.bincount(counts, minlength=k_max + 1)[1:] / replicates
    k = np.arange(1, k_max + 1)
    geometric = p * (1.0 - p) ** (k - 1)
    tv = 0.5 * (float(np.abs(empirical - geometric).sum()) + (1.0 - p) ** k_max)

    q = (1.0 - p) ** 10  # P(N_t > 10) under the geometric law
    q_hat = float(np.mean(counts > 10))
    tail_check = bool(abs(q_hat - q) <= 3.0 * _binomial_se(q, replicates))
    return tv, tail_check
