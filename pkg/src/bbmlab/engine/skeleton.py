"""Branching skeleton and step-grid construction for one replicate.

The tree is generated wave by wave (creation order = generation order, so a
parent's index is always smaller than its children's). Branch times are exact
exponential draws; motion is discretized afterwards on a per-particle grid
whose anchors are the particle's birth, every observation time inside its
lifetime, and its end (branch or horizon), each gap split into equal steps of
at most dt so anchors are hit exactly.

Draw order per replicate is fixed and documented (root lifetime draw, then one
exponential batch per wave, then one normals block, then one uniform block for
the bridge correction); both path kernels consume the same pre-drawn blocks,
which is what makes the compiled and fallback backends bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..model import ModelParams

__all__ = ["StrategyCondition", "Skeleton", "ReplicatePlan", "build_skeleton", "build_plan"]

_MODES = ("none", "no_branch_until", "no_branch_and_escape", "branch_before")


@dataclass(frozen=True)
class StrategyCondition:
    """Conditioning applied to the initial particle's first branch time.

    no_branch_until: the root does not branch before t0 (exact weight
    e^{-beta t0}). no_branch_and_escape: same conditioning, with the radius
    the escape strategy should clear recorded for downstream checks (the
    escape itself is sampled, not forced). branch_before: the root branches
    before t0 (weight 1 - e^{-beta t0}); complement stratum of the first two.
    """

    mode: str = "none"
    t0: float = 0.0
    checked_radius: float | None = None

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise ValueError(f"unknown condition mode {self.mode!r}")
        if self.mode != "none" and not (self.t0 > 0):
            raise ValueError("conditioned modes need t0 > 0")
        if self.mode == "no_branch_and_escape" and self.checked_radius is None:
            raise ValueError("no_branch_and_escape needs checked_radius")

    def log_weight(self, beta: float) -> float:
        """Log-probability of the conditioning event under rate beta."""
        if self.mode == "none":
            return 0.0
        if self.mode == "branch_before":
            return math.log1p(-math.exp(-beta * self.t0))
        return -beta * self.t0


NONE = StrategyCondition()


@dataclass
class Skeleton:
    """Tree of one replicate: creation-order arrays, parents before children."""

    birth: np.ndarray  # float64[P]
    branch: np.ndarray  # float64[P], inf when the particle never splits
    parent: np.ndarray  # int64[P], -1 for the root
    wave_off: np.ndarray  # int64[W+1], creation-order slice per generation
    horizon: float
    truncated: bool

    @property
    def size(self) -> int:
        return int(self.birth.shape[0])


def _root_lifetime(gen: np.random.Generator, beta: float, condition: StrategyCondition) -> float:
    if beta == 0.0:
        return math.inf
    if condition.mode == "branch_before":
        u = gen.random()
        # inverse CDF of an exponential truncated to (0, t0)
        return -math.log1p(-u * -math.expm1(-beta * condition.t0)) / beta
    tau = gen.standard_exponential() / beta
    if condition.mode == "none":
        return tau
    return condition.t0 + tau


def build_skeleton(
    beta: float,
    horizon: float,
    gen: np.random.Generator,
    condition: StrategyCondition = NONE,
    max_live: int = 2**22,
) -> Skeleton:
    """Generate the branching tree up to `horizon`.

    When the live-particle count would pass max_live, the tree is cut at the
    moment the cap is crossed (the max_live-th branch event) and the skeleton
    is returned truncated at the last horizon it fully covers.
    """
    birth = [np.zeros(1)]
    branch = [np.array([_root_lifetime(gen, beta, condition)])]
    parent = [np.full(1, -1, dtype=np.int64)]
    wave_off = [0, 1]
    created = 1
    frontier = branch[0] if branch[0][0] < horizon else branch[0][:0]
    frontier_idx = np.zeros(1 if frontier.size else 0, dtype=np.int64)

    truncated = False
    while frontier_idx.size:
        k = frontier_idx.size
        if created + 2 * k > 2 * max_live:
            truncated = True
            break
        child_birth = np.repeat(frontier, 2)
        tau = gen.standard_exponential(2 * k) / beta
        birth.append(child_birth)
        branch.append(child_birth + tau)
        parent.append(np.repeat(frontier_idx, 2))
        frontier_idx = created + np.nonzero(branch[-1] < horizon)[0]
        frontier = branch[-1][branch[-1] < horizon]
        created += 2 * k
        wave_off.append(created)

    b = np.concatenate(birth)
    br = np.concatenate(branch)
    pa = np.concatenate(parent)
    off = np.asarray(wave_off, dtype=np.int64)

    if not truncated:
        return Skeleton(b, br, pa, off, horizon, False)

    # live(t) = 1 + #{branch events <= t}; the cap is crossed at the
    # max_live-th smallest branch time, which is already known exactly
    events = br[br < horizon]
    t_cut = float(np.partition(events, max_live - 1)[max_live - 1])
    keep = b < t_cut
    kept_idx = np.nonzero(keep)[0]
    remap = np.cumsum(keep) - 1
    pa_new = pa[keep].copy()
    child_mask = pa_new >= 0
    pa_new[child_mask] = remap[pa_new[child_mask]]
    off_new = np.searchsorted(kept_idx, off, side="left").astype(np.int64)
    return Skeleton(b[keep], br[keep], pa_new, off_new, t_cut, True)


@dataclass
class ReplicatePlan:
    """Everything a path kernel needs, with randomness pre-drawn as data."""

    d: int
    x0: np.ndarray  # float64[d]
    skeleton: Skeleton
    obs: np.ndarray  # float64[J], strictly increasing, <= horizon
    obs_radius: np.ndarray  # float64[J]
    step_off: np.ndarray  # int64[P+1]
    step_h: np.ndarray  # float64[S]
    pair_off: np.ndarray  # int64[P+1]
    pair_obs: np.ndarray  # int64[K], observation index per alive pair
    pair_k: np.ndarray  # int64[K], steps into the segment at that observation
    total_counts: np.ndarray  # int64[J], particles alive per observation

    @property
    def n_steps(self) -> int:
        return int(self.step_h.shape[0])


def build_plan(
    params: ModelParams,
    skeleton: Skeleton,
    observation_times: np.ndarray,
    x0: np.ndarray | None = None,
) -> ReplicatePlan:
    """Lay out per-particle step grids and (particle, observation) pairs.

    A particle's grid covers [birth, min(branch, horizon)]; each gap between
    consecutive anchors is split into ceil(gap/dt) equal steps. pair_k gives,
    for every observation inside the particle's lifetime, how many of its
    steps precede that observation (0 when the observation is its birth).
    """
    obs = np.ascontiguousarray(observation_times, dtype=np.float64)
    if obs.size == 0:
        raise ValueError("need at least one observation time")
    if np.any(np.diff(obs) <= 0):
        raise ValueError("observation times must be strictly increasing")
    if skeleton.truncated:
        # counts at the cut instant itself are incomplete; keep strictly below
        obs = obs[obs < skeleton.horizon]
    elif obs[-1] > skeleton.horizon:
        obs = obs[obs <= skeleton.horizon]
    t_last = float(obs[-1]) if obs.size else 0.0
    d = params.dimension
    if x0 is None:
        x0 = np.zeros(d)
    x0 = np.ascontiguousarray(x0, dtype=np.float64)

    birth, branch = skeleton.birth, skeleton.branch
    P = skeleton.size
    J = int(obs.size)
    if J == 0:
        return ReplicatePlan(
            d=d,
            x0=x0,
            skeleton=skeleton,
            obs=obs,
            obs_radius=np.empty(0),
            step_off=np.zeros(P + 1, np.int64),
            step_h=np.empty(0),
            pair_off=np.zeros(P + 1, np.int64),
            pair_obs=np.empty(0, np.int64),
            pair_k=np.empty(0, np.int64),
            total_counts=np.empty(0, np.int64),
        )

    end = np.minimum(branch, t_last)
    lo = np.searchsorted(obs, birth, side="right")
    hi = np.searchsorted(obs, end, side="left")
    j0 = np.searchsorted(obs, birth, side="left")
    jend = np.searchsorted(obs, branch, side="left")
    cnt = jend - j0

    # hi < lo happens only for a zero-length segment (observation at t=0
    # hitting the root's birth); keep one zero-length gap so the layout
    # stays uniform (it becomes a single h=0 step, a no-op in the kernels)
    n_gap = np.maximum(hi - lo, 0) + 1
    gap_off = np.concatenate(([0], np.cumsum(n_gap)))
    G = int(gap_off[-1])
    gp = np.repeat(np.arange(P, dtype=np.int64), n_gap)
    g_local = np.arange(G, dtype=np.int64) - np.repeat(gap_off[:-1], n_gap)

    left_idx = np.clip(lo[gp] + g_local - 1, 0, J - 1)
    left = np.where(g_local == 0, birth[gp], obs[left_idx])
    last_gap = g_local == (n_gap[gp] - 1)
    right_idx = np.clip(lo[gp] + g_local, 0, J - 1)
    right = np.where(last_gap, end[gp], obs[right_idx])

    glen = right - left
    m = np.maximum(1, np.ceil(glen / params.dt - 1e-9).astype(np.int64))
    h = glen / m
    step_h = np.repeat(h, m)
    steps_per = np.add.reduceat(m, gap_off[:-1]) if G else np.zeros(P, np.int64)
    step_off = np.concatenate(([0], np.cumsum(steps_per))).astype(np.int64)

    cum_m = np.cumsum(m)
    start_excl = cum_m[gap_off[:-1]] - m[gap_off[:-1]]

    K = int(cnt.sum())
    pair_off = np.concatenate(([0], np.cumsum(cnt))).astype(np.int64)
    pi = np.repeat(np.arange(P, dtype=np.int64), cnt)
    pj = j0[pi] + (np.arange(K, dtype=np.int64) - np.repeat(pair_off[:-1], cnt))
    at_birth = pj < lo[pi]
    interior = pj < hi[pi]
    gidx = np.clip(gap_off[pi] + (pj - lo[pi]), 0, max(G - 1, 0))
    through_gap = cum_m[gidx] - start_excl[pi] if G else np.zeros(K, np.int64)
    pair_k = np.where(at_birth, 0, np.where(interior, through_gap, steps_per[pi]))

    total_counts = np.bincount(pj, minlength=J).astype(np.int64)
    obs_radius = np.array([params.radius_at(float(t)) for t in obs])

    return ReplicatePlan(
        d=d,
        x0=x0,
        skeleton=skeleton,
        obs=obs,
        obs_radius=obs_radius,
        step_off=step_off,
        step_h=step_h,
        pair_off=pair_off,
        pair_obs=pj.astype(np.int64),
        pair_k=pair_k.astype(np.int64),
        total_counts=total_counts,
    )
