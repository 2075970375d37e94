"""Single-particle path sampling (no branching).

Confinement probabilities and displacement tails only need the running
radial maximum of one Brownian path, so paths are simulated in fixed-size
blocks with plain array arithmetic instead of the tree machinery. Streams
are keyed by (seed, stream_tag, block index) with a constant block size,
which keeps results independent of the worker count.
"""

from __future__ import annotations

import math

import numpy as np

from . import parallel
from .core import STREAM_CONFINEMENT, STREAM_PROBE, generator

__all__ = ["confinement_probability_mc", "displacement_tail_probe"]

_BLOCK = 4096
_SEG_ELEMENTS = 1 << 21  # cap on draws materialized at once within a block


def _runmax_block(
    gen: np.random.Generator, n: int, steps: int, d: int, h: float, bridge: bool
) -> np.ndarray:
    """Running max of |B| over an equal-step grid for n paths from the origin.

    Long grids are consumed in time segments of at most _SEG_ELEMENTS draws
    (normals first, then the bridge uniforms, per segment), so memory stays
    bounded for arbitrarily fine dt.
    """
    seg = max(1, _SEG_ELEMENTS // max(1, n * d))
    best = np.zeros(n)
    pos = np.zeros((n, d))
    prev_rad = np.zeros(n)
    done = 0
    while done < steps:
        m = min(seg, steps - done)
        z = gen.standard_normal(n * m * d).reshape(n, m, d)
        cum = np.cumsum(z * math.sqrt(h), axis=1)
        cum += pos[:, None, :]
        rad = np.sqrt(np.einsum("nsd,nsd->ns", cum, cum))
        prev = np.concatenate([prev_rad[:, None], rad[:, :-1]], axis=1)
        if bridge:
            lu = np.log1p(-gen.random(n * m).reshape(n, m))
            diff = prev - rad
            val = 0.5 * (prev + rad + np.sqrt(diff * diff - 2.0 * h * lu))
            np.maximum(best, val.max(axis=1), out=best)
        else:
            np.maximum(best, rad.max(axis=1), out=best)
        pos = cum[:, -1, :].copy()
        prev_rad = rad[:, -1].copy()
        done += m
    return best


def _tally_chunk(payload, lo: int, hi: int):
    d, steps, h, bridge, seed, stream_tag, threshold, upper_tail, total = payload
    hits = np.empty(hi - lo, dtype=np.int64)
    sizes = np.empty(hi - lo, dtype=np.int64)
    for bi in range(lo, hi):
        n = min(_BLOCK, total - bi * _BLOCK)
        gen = generator(seed, stream_tag, bi)
        m = _runmax_block(gen, n, steps, d, h, bridge)
        inside = m >= threshold if upper_tail else m <= threshold
        hits[bi - lo] = int(np.count_nonzero(inside))
        sizes[bi - lo] = n
    return hits, sizes


def _tally(
    d: int,
    t: float,
    dt: float,
    replicates: int,
    seed: int,
    bridge: bool,
    stream_tag: int,
    threshold: float,
    upper_tail: bool,
    threads: int | None,
) -> tuple[int, int]:
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if not (t > 0 and dt > 0):
        raise ValueError("need t > 0 and dt > 0")
    if replicates < 1:
        raise ValueError("need at least one path")
    steps = max(1, math.ceil(t / dt - 1e-9))
    h = t / steps
    blocks = -(-replicates // _BLOCK)
    payload = (d, steps, h, bridge, seed, stream_tag, threshold, upper_tail, replicates)
    hits, sizes = parallel.map_chunks(_tally_chunk, payload, blocks, threads)
    return int(hits.sum()), int(sizes.sum())


def confinement_probability_mc(
    d: int,
    b: float,
    t: float,
    replicates: int,
    seed: int,
    *,
    dt: float | None = None,
    bridge: bool = True,
    stream_tag: int = STREAM_CONFINEMENT,
    threads: int | None = 1,
):
    """P(sup_{s<=t} |B_s| <= b) for Brownian motion from the center.

    The default step keeps the grid fine relative to the diffusive boundary
    scale b^2; the bridge refinement catches excursions between grid points,
    so the estimate does not drift up as dt coarsens.
    """
    if not (b > 0):
        raise ValueError("radius must be positive")
    if dt is None:
        dt = min(t / 16.0, 0.01 * b * b)
    hits, n = _tally(d, t, dt, replicates, seed, bridge, stream_tag, b, False, threads)
    from ..estimators import Estimate

    p = hits / n
    se = math.sqrt(p * (1.0 - p) / n)
    return Estimate(
        value=p,
        std_error=se,
        replicates=n,
        mode="naive",
        zero_hit=(hits == 0),
        upper_bound=(1.0 - 0.05 ** (1.0 / n)) if hits == 0 else None,
        detail={"dimension": d, "radius": b, "t": t, "dt": dt, "bridge": bridge},
    )


def displacement_tail_probe(
    k: float,
    t: float,
    d: int = 1,
    replicates: int = 1_000_000,
    seed: int = 0,
    *,
    dt: float | None = None,
    bridge: bool = True,
    threads: int | None = 1,
):
    """P(sup_{s<=t} |B_s| >= k t): the single-path displacement tail.

    Its decay exponent -log(p)/t approaches k^2/2 for large t, the
    suppression half of the rate curve; the detail dict reports both so the
    two can be compared directly. Needs enough paths to see the tail at all
    (hence the floor on replicates); a zero-hit result is flagged and
    carries a one-sided 95% upper bound instead of a point estimate.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    if replicates < 1000:
        raise ValueError("tail probes need at least 1000 paths")
    if dt is None:
        dt = min(t / 64.0, 0.01 * (k * t) ** 2) if k > 0 else t / 64.0
    hits, n = _tally(d, t, dt, replicates, seed, bridge, STREAM_PROBE, k * t, True, threads)
    from ..estimators import Estimate

    p = hits / n
    se = math.sqrt(p * (1.0 - p) / n)
    detail = {
        "reference_rate": 0.5 * k * k,
        "decay_rate": (-math.log(p) / t) if hits else math.inf,
        "threshold": k * t,
        "dt": dt,
    }
    return Estimate(
        value=p,
        std_error=se,
        replicates=n,
        mode="naive",
        zero_hit=(hits == 0),
        upper_bound=(1.0 - 0.05 ** (1.0 / n)) if hits == 0 else None,
        detail=detail,
    )
