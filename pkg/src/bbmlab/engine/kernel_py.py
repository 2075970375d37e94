"""Pure-numpy path kernel (fallback backend).

Computes exactly what the compiled kernel computes, bit for bit: positions
advance by pre-drawn Gaussian increments scaled per step, the radial norm is
accumulated dimension by dimension in index order, the optional bridge
crossing value is evaluated with the same expression tree, and running maxima
use IEEE max, which is associative. Particles are grouped into power-of-two
width buckets so per-particle scans become row operations; numpy's
cumsum/maximum.accumulate are sequential scans, matching the C loop's
left-to-right association.
"""

from __future__ import annotations

import numpy as np

from .skeleton import ReplicatePlan

__all__ = ["run_paths"]

NAME = "python"


def run_paths(
    plan: ReplicatePlan,
    normals: np.ndarray,
    logu: np.ndarray | None,
    collect: bool = False,
):
    """Run all particle segments; see engine.core for the output contract."""
    d = plan.d
    sk = plan.skeleton
    P = sk.size
    J = int(plan.obs.shape[0])
    step_off, step_h = plan.step_off, plan.step_h
    S = int(step_h.shape[0])
    L = np.diff(step_off)
    K = int(plan.pair_obs.shape[0])

    sqrt_h = np.sqrt(step_h)
    incr = normals.reshape(S, d) * sqrt_h[:, None] if S else np.zeros((0, d))

    final_disp = np.zeros((P, d))
    own_final = np.full(P, -np.inf)
    row_of = np.zeros(P, dtype=np.int64)
    bucket_of = np.full(P, -1, dtype=np.int64)

    # phase 1: padded cumulative displacements per width bucket
    buckets: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = []
    width, floor = 1, 0
    max_l = int(L.max()) if P else 0
    while floor < max_l:
        idx = np.nonzero((L > floor) & (L <= width))[0]
        if idx.size:
            cols = np.arange(width, dtype=np.int64)
            flat = step_off[idx][:, None] + cols[None, :]
            valid = cols[None, :] < L[idx][:, None]
            safe = np.where(valid, flat, 0)
            inc = incr[safe] * valid[:, :, None]
            cum = np.cumsum(inc, axis=1)
            rows = np.arange(idx.size)
            final_disp[idx] = cum[rows, L[idx] - 1]
            row_of[idx] = rows
            bucket_of[idx] = len(buckets)
            buckets.append((idx, cum, valid, safe))
        floor, width = width, 2 * width

    # phase 2: resolve segment starts generation by generation
    start = np.empty((P, d))
    start[0] = plan.x0
    wave_off = sk.wave_off
    for w in range(1, len(wave_off) - 1):
        nodes = slice(int(wave_off[w]), int(wave_off[w + 1]))
        par = sk.parent[nodes]
        start[nodes] = start[par] + final_disp[par]

    start_r2 = start[:, 0] * start[:, 0]
    for c in range(1, d):
        start_r2 = start_r2 + start[:, c] * start[:, c]
    start_rad = np.sqrt(start_r2)

    # phase 3: radial values, bridge correction, running maxima
    pair_pp = np.repeat(np.arange(P, dtype=np.int64), np.diff(plan.pair_off))
    own_at_pair = np.full(K, -np.inf)
    pair_pos = np.empty((K, d)) if collect else None
    seg_runmax: list[np.ndarray] = []
    seg_pos: list[np.ndarray] = []
    for idx, cum, valid, safe in buckets:
        pos = start[idx][:, None, :] + cum
        r2 = pos[:, :, 0] * pos[:, :, 0]
        for c in range(1, d):
            r2 = r2 + pos[:, :, c] * pos[:, :, c]
        rad = np.sqrt(r2)
        prev = np.concatenate([start_rad[idx][:, None], rad[:, :-1]], axis=1)
        if logu is None:
            val = rad
        else:
            hmat = step_h[safe]
            lumat = logu[safe]
            diff = prev - rad
            val = 0.5 * (prev + rad + np.sqrt(diff * diff - 2.0 * hmat * lumat))
        val = np.where(valid, val, -np.inf)
        runmax = np.maximum.accumulate(val, axis=1)
        rows = np.arange(idx.size)
        own_final[idx] = runmax[rows, L[idx] - 1]
        seg_runmax.append(runmax)
        seg_pos.append(pos if collect else None)

    # inherited ancestral maxima, generation by generation
    inherit = np.empty(P)
    total_final = np.empty(P)
    inherit[0] = start_rad[0]
    total_final[0] = np.maximum(inherit[0], own_final[0])
    for w in range(1, len(wave_off) - 1):
        nodes = slice(int(wave_off[w]), int(wave_off[w + 1]))
        par = sk.parent[nodes]
        inherit[nodes] = total_final[par]
        total_final[nodes] = np.maximum(inherit[nodes], own_final[nodes])

    # per (particle, observation) pair: running max after pair_k steps
    has_steps = plan.pair_k > 0
    for b, (idx, cum, valid, safe) in enumerate(buckets):
        sel = np.nonzero(has_steps & (bucket_of[pair_pp] == b))[0]
        if sel.size == 0:
            continue
        rows = row_of[pair_pp[sel]]
        ks = plan.pair_k[sel] - 1
        own_at_pair[sel] = seg_runmax[b][rows, ks]
        if collect:
            pair_pos[sel] = seg_pos[b][rows, ks]
    if collect and K:
        at_birth = np.nonzero(~has_steps)[0]
        pair_pos[at_birth] = start[pair_pp[at_birth]]

    pair_max = np.maximum(inherit[pair_pp], own_at_pair) if K else np.empty(0)
    if K:
        active = pair_max <= plan.obs_radius[plan.pair_obs]
        n_active = np.bincount(plan.pair_obs[active], minlength=J).astype(np.int64)
    else:
        n_active = np.zeros(J, dtype=np.int64)

    final_pos = start + final_disp
    return n_active, final_pos, total_final, pair_max, pair_pos
