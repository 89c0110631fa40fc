"""Seed derivation and small shared helpers.

All randomness in the package flows from a single user-facing seed.
Sub-tasks (per-replicate draws, per-iteration classifier splits, per-pair
adaptation runs, ...) derive their own seed with :func:`derive_seed`, which
hashes ``base`` together with a stable role string.  The derivation is
pure and platform-independent, so serial and parallel executions of the
same experiment see identical random streams.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base: int, *roles: str | int) -> int:
    """Derive a 32-bit seed from a base seed and a role path.

    ``derive_seed(7, "rep3", "adv1")`` is the documented hash
    ``sha256("7/rep3/adv1")`` truncated to 4 bytes.
    """
    key = "/".join(str(part) for part in (base, *roles))
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def rng_for(base: int, *roles: str | int) -> np.random.Generator:
    """Fresh generator seeded by :func:`derive_seed`."""
    return np.random.default_rng(derive_seed(base, *roles))
