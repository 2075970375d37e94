"""Deterministic replicate parallelism.

Work is split into index spans handed to forked worker processes; every
randomized quantity is keyed by its replicate index alone, so the stitched
result is identical for any worker count (including 1, which runs inline).
"""

from __future__ import annotations

import os
from multiprocessing import get_context

import numpy as np

__all__ = ["resolve_threads", "map_chunks"]

_FN = None
_PAYLOAD = None


def resolve_threads(threads: int | None) -> int:
    """0 or None means auto: BBM_THREADS env var, else the CPU count."""
    if not threads:
        env = os.environ.get("BBM_THREADS", "").strip()
        if env:
            threads = int(env)
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise ValueError("thread count must be >= 1")
    return threads


def _init(fn, payload) -> None:
    global _FN, _PAYLOAD
    _FN = fn
    _PAYLOAD = payload


def _run(span):
    lo, hi = span
    return lo, _FN(_PAYLOAD, lo, hi)


def map_chunks(fn, payload, total: int, threads: int | None = 1):
    """Evaluate fn(payload, lo, hi) over [0, total) and stitch the pieces.

    fn must be a module-level function returning a tuple of arrays whose
    leading dimension is hi - lo; fn must derive randomness only from
    (payload, replicate index) so chunking cannot change results.
    """
    workers = resolve_threads(threads)
    if workers <= 1 or total <= 1:
        return fn(payload, 0, total)
    chunk = max(1, -(-total // (workers * 4)))
    spans = [(lo, min(lo + chunk, total)) for lo in range(0, total, chunk)]
    ctx = get_context("fork")
    with ctx.Pool(
        processes=min(workers, len(spans)), initializer=_init, initargs=(fn, payload)
    ) as pool:
        parts = sorted(pool.map(_run, spans), key=lambda item: item[0])
    pieces = [part[1] for part in parts]
    return tuple(np.concatenate([pc[i] for pc in pieces], axis=0) for i in range(len(pieces[0])))
