"""Splittable deterministic randomness keyed by hashable paths."""

from __future__ import annotations

import hashlib

import numpy as np

_SCALE = float(2**64)


def derive_seed(*parts: object) -> int:
    """A 64-bit seed determined entirely by ``parts``."""
    key = "\x1f".join(map(str, parts)).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def unit_float(*parts: object) -> float:
    """A uniform draw in [0, 1) determined entirely by ``parts``."""
    return derive_seed(*parts) / _SCALE


def rng_for(*parts: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
