"""Deterministic chunked fan-out.

Chunk boundaries depend only on the problem size, and results come back in
chunk order, so any reduction over them is independent of the worker count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

CHUNK_ROWS = 4096


def default_workers() -> int:
    env = os.environ.get("QEDNET_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def chunk_slices(n: int, size: int = CHUNK_ROWS) -> list[slice]:
    return [slice(i, min(i + size, n)) for i in range(0, n, size)] or [slice(0, 0)]


def ordered_map(fn: Callable[[T], R], items: Sequence[T], workers: int | None = None) -> list[R]:
    workers = workers or 1
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
