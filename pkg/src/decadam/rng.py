"""Seeded random streams.

One master seed fans out into independent Philox (counter-based) streams keyed
by ``(purpose, index)``. Worker ``k``'s gradient stream is the same whether the
run has 2 workers or 200, so adding workers never perturbs existing ones.
"""

from __future__ import annotations

import numpy as np

__all__ = ["PURPOSES", "stream", "worker_streams"]

PURPOSES = {
    "gradient": 0,
    "compress": 1,
    "problem_shared": 2,
    "problem_worker": 3,
    "init": 4,
}


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(seed, spawn_key=(PURPOSES[purpose], index))
    return np.random.Generator(np.random.Philox(ss))


def worker_streams(seed: int, purpose: str, K: int) -> list[np.random.Generator]:
    return [stream(seed, purpose, k) for k in range(K)]
