"""Splittable, counter-based random streams.

Every random draw in the package comes from :func:`stream`.  A stream is a
``numpy.random.Generator`` backed by the Philox-4x64 counter-based bit
generator, keyed by a ``numpy.random.SeedSequence`` whose entropy is the
user's 64-bit seed and whose spawn key is

    (crc32(module), crc32(purpose), index)

Both Philox and the SeedSequence hashing are fixed, documented algorithms in
numpy, so a given ``(seed, module, purpose, index)`` yields the same bits on
every platform and numpy release that keeps those algorithms stable.
"""

from __future__ import annotations

import zlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def _label(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def stream(seed: int, module: str, purpose: str, index: int = 0) -> np.random.Generator:
    """Return the independent generator for ``(module, purpose, index)``."""
    if seed < 0:
        raise ValueError(f"seed must be a non-negative 64-bit integer, got {seed}")
    if index < 0:
        raise ValueError(f"stream index must be non-negative, got {index}")
    seq = np.random.SeedSequence(
        entropy=int(seed) & SEED_MASK,
        spawn_key=(_label(module), _label(purpose), int(index)),
    )
    return np.random.Generator(np.random.Philox(seq))


def child_seed(seed: int, module: str, purpose: str, index: int = 0) -> int:
    """Derive a 64-bit seed for a nested component that takes its own seed."""
    return int(stream(seed, module, purpose, index).integers(0, 2**63, dtype=np.int64))


def unit_vectors(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    """Draw ``count`` points uniformly from the unit sphere in R^n."""
    x = rng.standard_normal((count, n))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    # a zero Gaussian draw has probability zero; guard anyway
    norms[norms == 0.0] = 1.0
    return x / norms


def rademacher(rng: np.random.Generator, size) -> np.ndarray:
    return rng.integers(0, 2, size=size).astype(np.float64) * 2.0 - 1.0
