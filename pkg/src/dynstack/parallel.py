"""Seeded random streams and the task pool.

Every independent task (a posterior draw, a replicate, a simulated dataset)
gets its own Philox stream keyed by ``(seed, kind, index)``, so results do
not depend on how many threads run the tasks or in which order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, TypeVar

import numpy as np

T = TypeVar("T")
R_ = TypeVar("R_")

STREAM_KINDS = {
    "smooth": 1,
    "forecast": 2,
    "interpolate": 3,
    "simulate": 4,
    "replicate": 5,
    "grid": 6,
    "test": 99,
}

THREADS_ENV = "DYNSTACK_THREADS"


def stream(seed: int, kind: str, index: int = 0) -> np.random.Generator:
    if int(seed) < 0:
        raise ValueError("seed must be a nonnegative integer")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAM_KINDS[kind], int(index)))
    return np.random.Generator(np.random.Philox(ss))


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


@contextmanager
def task_pool(threads: int | None = None) -> Iterator[ThreadPoolExecutor | None]:
    n = resolve_threads(threads)
    if n == 1:
        yield None
        return
    with ThreadPoolExecutor(max_workers=n) as pool:
        yield pool


def ordered_map(fn: Callable[[T], R_], items: Iterable[T], pool=None) -> list[R_]:
    """``map`` that keeps input order, running on ``pool`` when given."""
    return list(pool.map(fn, items)) if pool is not None else [fn(x) for x in items]
