"""Deterministic seeding and order-preserving parallel maps.

Every random stream is keyed by (seed, module name, task index), never by
worker identity, so results do not depend on the number of threads.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

THREADS_ENV = "STEINPAIRS_THREADS"

T = TypeVar("T")


def default_workers() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def module_seed(seed: int, name: str) -> int:
    """Stable 64-bit seed for the stream named ``name`` under ``seed``."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def task_rng(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def ordered_map(fn: Callable[[int], T], n_tasks: int, workers: int | None = None) -> list[T]:
    """``[fn(0), ..., fn(n_tasks - 1)]`` evaluated on up to ``workers`` threads."""
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or n_tasks <= 1:
        return [fn(i) for i in range(n_tasks)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_tasks)))


def chunk_sizes(total: int, chunk: int) -> Sequence[int]:
    full, rest = divmod(total, chunk)
    return [chunk] * full + ([rest] if rest else [])
