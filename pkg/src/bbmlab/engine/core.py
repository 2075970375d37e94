"""Simulation driver: trees, paths, snapshots, and count sampling.

One replicate is sequential: the skeleton is generated first (branch times
exact, never discretized), then all Gaussian increments and bridge uniforms
are drawn as two blocks and handed to the selected path kernel. Replicates
are embarrassingly parallel; every stream is keyed by
SeedSequence(seed, spawn_key=(stream_tag, replicate)) over the counter-based
Philox generator, so results are independent of worker count and bit-stable
across reruns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..model import ModelParams
from . import backend, parallel
from .skeleton import NONE, ReplicatePlan, Skeleton, StrategyCondition, build_plan, build_skeleton

__all__ = [
    "BudgetExceededError",
    "ParticleRecord",
    "Snapshot",
    "SimulationResult",
    "MRCASplitProbe",
    "simulate",
    "active_count",
    "sample_counts",
    "mrca_split_probe",
    "STREAM_SIM",
    "STREAM_CONFINEMENT",
    "STREAM_NAIVE",
    "STREAM_STRATUM_QUIET",
    "STREAM_STRATUM_EARLY",
    "STREAM_PROBE",
    "STREAM_MRCA",
    "STREAM_MASS",
    "STREAM_LLN",
    "STREAM_COUNT_LAW",
]

DEFAULT_MAX_LIVE = 2**22


class BudgetExceededError(RuntimeError):
    """A run needs more live particles than the configured cap allows."""

# substream tags; one per independent Monte Carlo use so estimators never
# share draws by accident while identical uses share them on purpose
STREAM_SIM = 0
STREAM_CONFINEMENT = 1
STREAM_NAIVE = 2
STREAM_STRATUM_QUIET = 3
STREAM_STRATUM_EARLY = 4
STREAM_PROBE = 5
STREAM_MRCA = 6
STREAM_MASS = 7
STREAM_LLN = 8
STREAM_COUNT_LAW = 9


def generator(seed: int, stream_tag: int, replicate: int) -> np.random.Generator:
    """Philox stream for one replicate of one Monte Carlo use."""
    root = np.random.SeedSequence(
        entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(stream_tag), int(replicate))
    )
    return np.random.Generator(np.random.Philox(root))


@dataclass(frozen=True)
class ParticleRecord:
    """State of one particle at one observation time (diagnostics)."""

    position: np.ndarray
    running_max_radius: float
    next_branch_time: float
    lineage_id: int


@dataclass(frozen=True)
class Snapshot:
    """Per-observation totals: every particle, and the still-active ones."""

    t: float
    total: int
    active: int
    radius: float

    def __post_init__(self) -> None:
        if not (0 <= self.active <= self.total):
            raise ValueError("need 0 <= active <= total")
        if self.total < 1:
            raise ValueError("the tree never dies; total >= 1")


@dataclass
class SimulationResult:
    """Snapshots of one replicate, plus the conditioning weight.

    truncated marks runs cut by the live-particle budget; snapshots then
    cover only observation times strictly before the cut. particles holds
    per-observation ParticleRecord lists when collection was requested.
    """

    snapshots: list[Snapshot]
    truncated: bool
    log_weight: float
    particles: list[list[ParticleRecord]] | None = None

    def __iter__(self):
        return iter(self.snapshots)

    def __len__(self) -> int:
        return len(self.snapshots)

    def __getitem__(self, i):
        return self.snapshots[i]


def _check_observations(params: ModelParams, observation_times) -> np.ndarray:
    obs = np.asarray(observation_times, dtype=np.float64)
    if obs.ndim != 1 or obs.size == 0:
        raise ValueError("need a one-dimensional, nonempty observation list")
    if obs[0] < 0:
        raise ValueError("observation times must be nonnegative")
    if np.any(np.diff(obs) <= 0):
        raise ValueError("observation times must be strictly increasing")
    if obs[-1] > params.t_max:
        raise ValueError("observation times must not exceed t_max")
    return obs


def _run_replicate(
    params: ModelParams,
    obs: np.ndarray,
    seed: int,
    condition: StrategyCondition,
    replicate: int,
    stream_tag: int,
    max_live: int,
    kernel,
    collect: bool,
    start: np.ndarray | None = None,
) -> tuple[ReplicatePlan, tuple]:
    if params.branching_rate == 0.0 and condition.mode == "branch_before":
        raise ValueError("branch_before is impossible at branching rate 0")
    gen = generator(seed, stream_tag, replicate)
    sk = build_skeleton(params.branching_rate, float(obs[-1]), gen, condition, max_live)
    plan = build_plan(params, sk, obs, x0=start)
    n = plan.n_steps
    normals = gen.standard_normal(n * params.dimension)
    logu = np.log1p(-gen.random(n)) if (params.bridge_correction and n) else None
    run = kernel if kernel is not None else backend.run_paths
    return plan, run(plan, normals, logu, collect)


def simulate(
    params: ModelParams,
    observation_times,
    seed: int,
    condition: StrategyCondition | None = None,
    *,
    replicate: int = 0,
    stream_tag: int = STREAM_SIM,
    max_live: int = DEFAULT_MAX_LIVE,
    collect_particles: bool = False,
    kernel=None,
    start=None,
) -> SimulationResult:
    """One full trajectory of the branching system.

    Branch times are exact exponential(beta) draws; motion advances by
    Gaussian increments on a grid of spacing <= dt that hits every birth,
    observation, and branch time exactly. With bridge_correction the running
    radial maximum is refined by a Brownian-bridge crossing draw applied to
    the radial coordinate each step; the refinement can only raise the
    maximum (exact in one dimension near the boundary, upward-biased
    approximation in general). A particle is active at observation t when
    its ancestral running maximum is <= r(t); as r grows, lineages excluded
    earlier can become active again without any new motion. `start` places
    the initial particle off-center (default: the origin).
    """
    condition = condition if condition is not None else NONE
    obs = _check_observations(params, observation_times)
    if start is not None:
        start = np.asarray(start, dtype=np.float64)
        if start.shape != (params.dimension,):
            raise ValueError("start must be a d-vector")
    plan, out = _run_replicate(
        params,
        obs,
        seed,
        condition,
        replicate,
        stream_tag,
        max_live,
        kernel,
        collect_particles,
        start,
    )
    n_active, _, _, pair_max, pair_pos = out
    kept = plan.obs
    snapshots = [
        Snapshot(
            t=float(kept[j]),
            total=int(plan.total_counts[j]),
            active=int(n_active[j]),
            radius=float(plan.obs_radius[j]),
        )
        for j in range(kept.size)
    ]
    particles: list[list[ParticleRecord]] | None = None
    if collect_particles:
        particles = [[] for _ in range(kept.size)]
        branch = plan.skeleton.branch
        pair_particle = np.repeat(
            np.arange(plan.skeleton.size, dtype=np.int64), np.diff(plan.pair_off)
        )
        for p in range(plan.pair_obs.size):
            i = int(pair_particle[p])
            particles[int(plan.pair_obs[p])].append(
                ParticleRecord(
                    position=pair_pos[p].copy(),
                    running_max_radius=float(pair_max[p]),
                    next_branch_time=float(branch[i]),
                    lineage_id=i,
                )
            )
    beta = params.branching_rate
    log_weight = condition.log_weight(beta) if beta > 0 else 0.0
    return SimulationResult(
        snapshots=snapshots,
        truncated=plan.skeleton.truncated,
        log_weight=log_weight,
        particles=particles,
    )


def active_count(snapshot_particles: list[ParticleRecord], radius: float) -> int:
    """#particles whose ancestral running maximum fits inside `radius`."""
    return sum(1 for rec in snapshot_particles if rec.running_max_radius <= radius)


def _skeleton_counts(sk: Skeleton, obs: np.ndarray) -> np.ndarray:
    j_born = np.searchsorted(obs, sk.birth, side="left")
    j_gone = np.searchsorted(obs, sk.branch, side="left")
    J = obs.size
    born = np.bincount(j_born, minlength=J + 1)[:J]
    gone = np.bincount(j_gone, minlength=J + 1)[:J]
    return np.cumsum(born - gone).astype(np.int64)


def _counts_chunk(payload, lo: int, hi: int):
    (params, obs, seed, condition, stream_tag, max_live, skeleton_only) = payload
    J = obs.size
    totals = np.empty((hi - lo, J), dtype=np.int64)
    actives = np.empty((hi - lo, J), dtype=np.int64)
    truncated = np.zeros(hi - lo, dtype=bool)
    for rep in range(lo, hi):
        row = rep - lo
        if skeleton_only:
            gen = generator(seed, stream_tag, rep)
            sk = build_skeleton(
                params.branching_rate, float(obs[-1]), gen, condition, max_live
            )
            if sk.truncated:
                kept = obs[obs < sk.horizon]
                truncated[row] = True
                totals[row] = -1
                actives[row] = -1
                totals[row, : kept.size] = _skeleton_counts(sk, kept)
                actives[row, : kept.size] = 0
            else:
                totals[row] = _skeleton_counts(sk, obs)
                actives[row] = 0
        else:
            plan, out = _run_replicate(
                params, obs, seed, condition, rep, stream_tag, max_live, None, False
            )
            kept = plan.obs.size
            if plan.skeleton.truncated:
                truncated[row] = True
                totals[row] = -1
                actives[row] = -1
            totals[row, :kept] = plan.total_counts
            actives[row, :kept] = out[0]
    return totals, actives, truncated


def sample_counts(
    params: ModelParams,
    observation_times,
    replicates: int,
    seed: int,
    *,
    condition: StrategyCondition = NONE,
    stream_tag: int = STREAM_SIM,
    threads: int | None = 1,
    max_live: int = DEFAULT_MAX_LIVE,
    skeleton_only: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-replicate (total, active) counts at each observation time.

    Returns (totals, actives, truncated), the first two shaped
    (replicates, len(observation_times)); truncated rows carry -1 past the
    cut. skeleton_only skips all motion (actives are 0) for branching-law
    checks. The backend kernel is selected at import; replicates are
    distributed over `threads` forked workers without affecting results.
    """
    if replicates < 1:
        raise ValueError("need at least one replicate")
    obs = _check_observations(params, observation_times)
    payload = (params, obs, seed, condition or NONE, stream_tag, max_live, skeleton_only)
    return parallel.map_chunks(_counts_chunk, payload, replicates, threads)


@dataclass
class MRCASplitProbe:
    """Splitting times of the most recent common ancestor of sampled pairs.

    One uniformly chosen pair per tree, weighted by the tree's pair count,
    so the sample represents a pair chosen uniformly among all pairs of
    particles alive at t across realizations. Under that law the split
    time is a rate-beta exponential restricted to [0, t], which is what
    the fitted tail rate is compared against.
    """

    split_times: np.ndarray  # sorted, one per sampled pair
    weights: np.ndarray  # pair count of the tree each sample came from
    tail_threshold: float
    tail_rate: float  # exponential rate fitted to exceedances above the threshold
    pairs: int
    trees_used: int

    def survival_at(self, s: float) -> float:
        total = float(self.weights.sum())
        return float(self.weights[self.split_times > s].sum() / total)


def _truncated_exp_rate(x: np.ndarray, w: np.ndarray, span: float) -> float:
    """MLE of the rate of an exponential restricted to [0, span].

    Split times live in [0, t], so exceedances above the tail threshold are
    bounded; ignoring that bound would bias the fitted rate upward. Solves
    1/rate - span/(e^{rate*span} - 1) = weighted mean(x) by bisection.
    """
    mean = float(np.average(x, weights=w))
    if not (0 < mean < span / 2):
        return math.nan  # flat or increasing over the window; no decaying fit

    def truncated_mean(rate: float) -> float:
        z = rate * span
        if z > 700:
            return 1.0 / rate
        return 1.0 / rate - span / math.expm1(z)

    lo, hi = 1e-9, 2.0 / mean
    while truncated_mean(hi) > mean:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if truncated_mean(mid) > mean:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def mrca_split_probe(
    params: ModelParams,
    t: float,
    replicates: int,
    seed: int,
    *,
    max_live: int = DEFAULT_MAX_LIVE,
) -> MRCASplitProbe:
    """Sample pair-splitting times: two distinct particles alive at t, the
    branch time of their most recent common ancestor.

    `replicates` counts sampled pairs: one uniform pair per tree carrying
    the tree's pair count as weight (trees with fewer than two particles
    are redrawn). The tail above 0.6*t is summarized by the weighted
    exponential-rate MLE on exceedances, which targets the branching rate.
    """
    beta = params.branching_rate
    if not (beta > 0):
        raise ValueError("pair sampling needs a positive branching rate")
    if beta * t > 8:
        raise ValueError("probe is meant for moderate horizons (beta*t <= 8)")
    samples = np.empty(replicates)
    weights = np.empty(replicates)
    got = 0
    rep = 0
    budget = 1000 * replicates
    while got < replicates:
        if rep >= budget:
            raise RuntimeError("pair sampling kept hitting single-particle trees")
        gen = generator(seed, STREAM_MRCA, rep)
        rep += 1
        sk = build_skeleton(beta, t, gen, NONE, max_live)
        alive = np.nonzero((sk.birth <= t) & (sk.branch > t))[0]
        m = alive.size
        if m < 2:
            continue
        first = int(gen.integers(m))
        second = int(gen.integers(m - 1))
        if second >= first:
            second += 1
        a, b = int(alive[first]), int(alive[second])
        birth, parent = sk.birth, sk.parent
        while a != b:
            # the later-born node cannot be the ancestor; climb it
            if birth[a] < birth[b]:
                b = int(parent[b])
            elif birth[a] > birth[b]:
                a = int(parent[a])
            else:
                a, b = int(parent[a]), int(parent[b])
        samples[got] = sk.branch[a]
        weights[got] = m * (m - 1)
        got += 1
    order = np.argsort(samples)
    samples, weights = samples[order], weights[order]
    s0 = 0.6 * t
    tail = samples > s0
    rate = (
        _truncated_exp_rate(samples[tail] - s0, weights[tail], t - s0)
        if int(tail.sum()) >= 10
        else math.nan
    )
    return MRCASplitProbe(
        split_times=samples,
        weights=weights,
        tail_threshold=s0,
        tail_rate=rate,
        pairs=replicates,
        trees_used=rep,
    )
