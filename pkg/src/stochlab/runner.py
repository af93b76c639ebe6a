"""Deterministic ensemble runner.

Work items are cut into chunks of a fixed size that does not depend on the
worker count; results are reassembled in item order. Any randomness must be keyed by the item itself (seed
derivation), never by the executing thread, so outputs do not depend on
scheduling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

CHUNK = 32


def chunked(items: Sequence, size: int = CHUNK):
    if size < 1:
        raise ValueError("chunk size must be >= 1")
    return [items[i : i + size] for i in range(0, len(items), size)]


def run_chunks(fn: Callable, items: Sequence, workers: int = 1, size: int = CHUNK) -> list:
    """Apply ``fn(chunk) -> list`` to fixed chunks of ``items``; concatenate in order."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    chunks = chunked(list(items), size)
    if workers == 1 or len(chunks) <= 1:
        parts = [fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, chunks))
    out = []
    for p in parts:
        out.extend(p)
    return out


def run_items(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Apply ``fn(item)`` to every item, results in item order."""
    return run_chunks(lambda chunk: [fn(i) for i in chunk], items, workers, size=1)
