"""Stateless seed derivation for parallel replicas.

Every replica gets rng = default_rng(derive_seed(master, index, tag)), so
results do not depend on worker count or scheduling. The mixer is a
splitmix64-style finalizer, which has full avalanche on 64-bit inputs.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(x: int) -> int:
    x &= _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return (x ^ (x >> 31)) & _MASK


def _fnv64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & _MASK
    return h


def derive_seed(master: int, index: int, tag: str = "") -> int:
    """Mix (master seed, replica index, stream tag) into a fresh 64-bit seed.

    Distinct tags give independent-grade streams for the same (master, index);
    deterministic and hash-randomization-free.
    """
    h = _mix64(master & _MASK)
    h = _mix64(h ^ ((index & _MASK) + _GOLDEN))
    if tag:
        h = _mix64(h ^ _fnv64(tag.encode("utf-8")))
    return _mix64(h ^ _GOLDEN)


def site_uniforms(seed: int, sites: np.ndarray, tag: str = "env") -> np.ndarray:
    """Deterministic uniforms in (0, 1], one per integer site.

    Keyed by (seed, site) so lazily extending an environment window never
    reshuffles already-generated sites.
    """
    base = np.uint64(derive_seed(seed, 0, tag))
    x = (sites.astype(np.int64).view(np.uint64) + np.uint64(_GOLDEN)) * np.uint64(
        0xBF58476D1CE4E5B9
    )
    x ^= base
    # vectorized splitmix64 finalizer
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    x ^= x >> np.uint64(31)
    return ((x >> np.uint64(11)).astype(np.float64) + 1.0) * (2.0**-53)
