"""Deterministic, counter-based random stream derivation.

Every random decision in the package draws from a generator derived from
the master seed plus a tuple of context tokens (purpose string, epoch,
step, slide id, ...).  Streams are therefore stateless: re-deriving with
the same tokens reproduces the stream exactly, which is what makes
mid-run resume and validation-independence guarantees hold bit-for-bit.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _token_to_int(token) -> int:
    if isinstance(token, (int, np.integer)):
        return int(token) & 0xFFFFFFFFFFFFFFFF
    if isinstance(token, str):
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"rng token must be int or str, got {type(token).__name__}")


def derive_rng(*tokens) -> np.random.Generator:
    """Return a generator uniquely determined by the token tuple."""
    entropy = [_token_to_int(t) for t in tokens]
    return np.random.default_rng(np.random.SeedSequence(entropy))
