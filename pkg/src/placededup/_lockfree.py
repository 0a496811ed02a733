"""Unsynchronized multi-threaded SGD driver.

Workers share the parameter arrays and write to them without locks, so
results depend on thread interleaving. Only used when ``workers > 1``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def run_steps(step, batches, rng: np.random.Generator, workers: int = 1) -> float:
    """Apply ``step(batch, rng) -> loss`` to each batch and return the loss sum."""
    if workers <= 1:
        return float(sum(step(batch, rng) for batch in batches))
    batches = list(batches)
    rngs = rng.spawn(workers)

    def worker(w):
        return sum(step(batch, rngs[w]) for batch in batches[w::workers])

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return float(sum(pool.map(worker, range(workers))))
