"""Reproducible random substreams.

Draws are organised in fixed-size blocks of paths. Each block owns a Philox
stream keyed by ``(seed, stream tag, block index)`` through
:class:`numpy.random.SeedSequence`, so the numbers attached to a given path
are a pure function of the seed and the path index. Block size never depends
on the worker count, which makes results identical for any thread pool size.
"""
from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK_SIZE = 4096
THREADS_ENV = "DIRICHLET_ERRORS_THREADS"


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _tag(stream: str | int) -> int:
    if isinstance(stream, int):
        return stream
    return zlib.crc32(stream.encode())


def generator(seed: int, stream: str | int, *index: int) -> np.random.Generator:
    """Philox generator for one substream."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                spawn_key=(_tag(stream),) + tuple(int(i) for i in index))
    return np.random.Generator(np.random.Philox(ss))


def _blocks(n: int, block: int):
    for b, start in enumerate(range(0, n, block)):
        yield b, start, min(start + block, n)


def normals(seed: int, stream: str | int, n_paths: int, n_cols: int,
            workers: int | None = None, block: int = BLOCK_SIZE) -> np.ndarray:
    """Standard normal array of shape ``(n_paths, n_cols)``.

    Row ``p`` depends only on ``(seed, stream, p)`` and ``n_cols``.
    """
    out = np.empty((n_paths, n_cols))

    def fill(args):
        b, lo, hi = args
        rng = generator(seed, stream, b)
        out[lo:hi] = rng.standard_normal((block, n_cols))[: hi - lo]

    _run(fill, list(_blocks(n_paths, block)), workers)
    return out


def uniforms(seed: int, stream: str | int, n_samples: int, n_cols: int,
             guard: float = 0.0, workers: int | None = None,
             block: int = BLOCK_SIZE) -> np.ndarray:
    """Uniforms on (0, 1); values within ``guard`` of 0 or 1 are redrawn
    from the same block stream."""
    out = np.empty((n_samples, n_cols))

    def fill(args):
        b, lo, hi = args
        rng = generator(seed, stream, b)
        u = rng.random((block, n_cols))
        bad = (u <= guard) | (u >= 1.0 - guard)
        while bad.any():
            u[bad] = rng.random(int(bad.sum()))
            bad = (u <= guard) | (u >= 1.0 - guard)
        out[lo:hi] = u[: hi - lo]

    _run(fill, list(_blocks(n_samples, block)), workers)
    return out


def _run(fn, jobs, workers):
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(jobs) == 1:
        for job in jobs:
            fn(job)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(fn, jobs))
