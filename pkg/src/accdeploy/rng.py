"""Named, independent random streams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, *path: str | int) -> np.random.Generator:
    """Generator for the sub-stream ``path`` of ``seed``.

    Streams with different paths are statistically independent, and adding a
    new path never perturbs existing ones.
    """
    words = [_key(p) if isinstance(p, str) else int(p) for p in path]
    return np.random.default_rng(np.random.SeedSequence([int(seed), *words]))


def derive_seed(seed: int, *path: str | int) -> int:
    """Integer seed for the sub-stream ``path``, for configs that store seeds."""
    return int(stream(seed, *path).integers(0, 2**63 - 1))
