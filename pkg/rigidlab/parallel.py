"""Chunked output-point parallelism with a fixed, thread-count independent layout."""

from __future__ import annotations

from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

from rigidlab.log import logger

T = TypeVar("T")

DEFAULT_CHUNK = 64


def chunk_bounds(count: int, chunk: int = DEFAULT_CHUNK) -> list[tuple[int, int]]:
    return [(lo, min(lo + chunk, count)) for lo in range(0, count, chunk)]


def map_chunks(
    fn: Callable[[int, int], T],
    count: int,
    threads: int = 1,
    chunk: int = DEFAULT_CHUNK,
) -> list[T]:
    """Apply fn(lo, hi) to consecutive chunks; results come back in chunk order.

    Chunk boundaries depend only on (count, chunk), so every chunk sees the same
    inputs whatever the thread count.
    """
    bounds = chunk_bounds(count, chunk)
    if threads <= 1 or len(bounds) <= 1:
        return [fn(lo, hi) for lo, hi in bounds]
    logger.debug(f"map_chunks: {len(bounds)} chunks on {threads} threads")
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))
