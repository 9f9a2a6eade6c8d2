"""Named, counter-based random streams.

Every random draw in the package goes through :func:`stream`, which derives a
Philox key from the global seed and a tuple of names (``"init"``, ``"env"``,
trajectory index, ...).  Two streams with different names never share state,
so adding a consumer never perturbs existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed: int, *names) -> int:
    payload = repr((int(seed),) + tuple(str(n) for n in names)).encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:16], "little")


def stream(seed: int, *names) -> np.random.Generator:
    """Return an independent generator for ``(seed, *names)``."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *names)))


def derive_seed(seed: int, *names) -> int:
    """A 63-bit integer seed for APIs that want a plain int."""
    return stream_key(seed, *names) & ((1 << 63) - 1)
