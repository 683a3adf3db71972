"""Deterministic seed derivation.

Training, degradation, cropping, and latent sampling all derive their
randomness from ``(root_seed, purpose, step, ...)`` through a keyed hash
instead of consuming a long-lived RNG stream. Resuming from a checkpoint
therefore reproduces an uninterrupted run bit-for-bit: nothing depends on
how much randomness was drawn before the current step.
"""

from __future__ import annotations

import hashlib

_MASK = (1 << 63) - 1


def derive_seed(*parts: int | str | float) -> int:
    """Collapse a tuple of mixed parts into a stable 63-bit seed."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little") & _MASK
