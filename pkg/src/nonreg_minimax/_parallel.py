from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_THREADS = "MINIMAX_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, then ``$MINIMAX_THREADS``, then the core count."""
    if threads is None:
        env = os.environ.get(ENV_THREADS)
        if env:
            threads = int(env)
    if threads is None or threads <= 0:
        threads = os.cpu_count() or 1
    return int(threads)


def pmap(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> list[R]:
    # results come back in input order, so reductions over them are deterministic
    items = list(items)
    n = min(resolve_threads(threads), len(items))
    if n <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
