"""Seed derivation: one root seed, named independent substreams."""

from __future__ import annotations

import zlib

import numpy as np


def _encode(key):
    if isinstance(key, str):
        return zlib.crc32(key.encode())
    return int(key) & 0xFFFFFFFF


def substream(root_seed, *keys):
    """Generator for a named substream of the root seed.

    The same (root_seed, keys) always yields the same stream, and distinct
    key paths are statistically independent.
    """
    entropy = [int(root_seed)] + [_encode(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
