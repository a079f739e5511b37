"""Deterministic replica-parallel execution.

Every replica draws its noise from the stream keyed by (seed, replica id) and
results are reassembled in id order, so the output does not depend on the
number of worker threads.  Vectorized pipelines hand out fixed-size chunks of
replica ids; the chunk boundaries depend only on the chunk size.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np


def resolve_threads(threads: int | None) -> int:
    """``None`` falls back to ERGOLIM_THREADS, 0 means one per CPU."""
    if threads is None:
        env = os.environ.get("ERGOLIM_THREADS")
        threads = int(env) if env else 1
    if threads < 0:
        raise ValueError("threads must be >= 0")
    return threads or (os.cpu_count() or 1)


@dataclass
class ReplicaResults:
    results: list
    failures: dict = field(default_factory=dict)

    @property
    def ok(self) -> list:
        return [r for r in self.results if r is not None]

    @property
    def n_failed(self) -> int:
        return len(self.failures)


def replica_map(m: int, seed: int, task: Callable[[int, int], Any],
                threads: int | None = 1) -> ReplicaResults:
    """Run ``task(seed, replica_id)`` for ids 0..m-1; failures are collected, not raised."""
    if m < 1:
        raise ValueError("need at least one replica")

    def one(rid):
        try:
            return rid, task(seed, rid), None
        except Exception as exc:  # recorded per replica
            return rid, None, f"{type(exc).__name__}: {exc}"

    n = resolve_threads(threads)
    if n == 1:
        out = [one(i) for i in range(m)]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            out = list(pool.map(one, range(m)))
    results = [None] * m
    failures = {}
    for rid, res, err in out:
        results[rid] = res
        if err is not None:
            failures[rid] = err
    return ReplicaResults(results, failures)


def chunk_map(m: int, seed: int, task: Callable[[int, np.ndarray], Any], chunk: int = 250,
              threads: int | None = 1) -> ReplicaResults:
    """``task(seed, ids)`` over consecutive id chunks of fixed size; one result per chunk."""
    n_chunks = -(-m // chunk)
    ids = [np.arange(c * chunk, min(m, (c + 1) * chunk)) for c in range(n_chunks)]
    return replica_map(n_chunks, seed, lambda s, c: task(s, ids[c]), threads)
