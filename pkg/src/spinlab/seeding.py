"""Derived-seed contract and a small chunked parallel map.

Every random stream is keyed by ``(seed, *path)`` through ``numpy``'s
``SeedSequence``, so a replication's draws depend only on its index and never
on how replications are spread over workers.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

SEED_MASK = (1 << 64) - 1


def derive_seed(seed: int, *path: int) -> np.random.SeedSequence:
    """Seed sequence for the task identified by ``path`` under the root ``seed``."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    return np.random.SeedSequence([int(seed) & SEED_MASK, *[int(p) for p in path]])


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *path))


def as_rng(rng: np.random.Generator | int | None) -> np.random.Generator:
    """Accept a Generator or an integer seed. ``None`` is refused: no ambient entropy."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise ValueError("an explicit seed or Generator is required")
    return np.random.default_rng(int(rng))


def chunk_sizes(total: int, chunk: int) -> list[int]:
    full, rest = divmod(int(total), int(chunk))
    return [chunk] * full + ([rest] if rest else [])


def map_chunks(func: Callable[[int, np.random.Generator], T], total: int, chunk: int,
               seed: int, key: int = 0, workers: int = 1) -> list[T]:
    """Run ``func(size, rng)`` over fixed-size chunks with per-chunk derived streams.

    The chunking is fixed by ``chunk`` alone, so the returned list is identical
    for any ``workers``. ``func`` must be picklable when ``workers > 1``.
    """
    sizes = chunk_sizes(total, chunk)
    rngs = [derive_rng(seed, key, idx) for idx in range(len(sizes))]
    if workers <= 1 or len(sizes) <= 1:
        return [func(n, g) for n, g in zip(sizes, rngs)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, sizes, rngs))


def stack_results(parts: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.atleast_1d(p) for p in parts], axis=0)
