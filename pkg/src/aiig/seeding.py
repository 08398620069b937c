"""Named random streams and the single-threaded deterministic mode."""

from __future__ import annotations

import contextlib
import zlib

import numpy as np
from threadpoolctl import threadpool_limits


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator keyed by ``(seed, name)``; independent of creation order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


class Streams:
    """Lazily created named generators sharing one root seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._cache: dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._cache:
            self._cache[name] = stream(self.seed, name)
        return self._cache[name]


@contextlib.contextmanager
def deterministic_mode(enabled: bool = True):
    """Pin BLAS to one thread so reductions happen in a fixed order."""
    if not enabled:
        yield
        return
    with threadpool_limits(limits=1):
        yield
