"""Counter-based randomness.

Every random quantity in the package is a pure function of a master seed and
an integer *path* (the work-unit key).  Streams are numpy ``Philox``
generators keyed through ``SeedSequence``; lattice site variables use a
stateless 64-bit hash of (key, site, component) so evaluation order never
changes values.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / float(1 << 53)


def _seed_sequence(seed: int, path: Sequence[int]) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))


def generator(seed: int, *path: int) -> np.random.Generator:
    """Independent Philox stream for work unit ``path`` under ``seed``."""
    return np.random.Generator(np.random.Philox(_seed_sequence(seed, path)))


def derive_key(seed: int, *path: int) -> int:
    """64-bit hash key for work unit ``path`` under ``seed``."""
    return int(_seed_sequence(seed, path).generate_state(1, dtype=np.uint64)[0])


def _mix(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps by design
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def site_uniforms(key, sites: np.ndarray, n_components: int) -> np.ndarray:
    """Uniform [0, 1) variables attached to integer lattice sites.

    ``sites`` is an (N, d) integer array and ``key`` an int or an (N,) array
    of per-row keys.  Returns an (N, n_components) array; entry (i, k)
    depends only on ``key[i]``, ``sites[i]`` and ``k``.
    """
    sites = np.asarray(sites, dtype=np.int64)
    if sites.ndim != 2:
        raise ValueError("sites must be an (N, d) array")
    with np.errstate(over="ignore"):
        if np.ndim(key) == 0:
            h = np.full(sites.shape[0], np.uint64(key), dtype=np.uint64)
        else:
            h = np.asarray(key, dtype=np.uint64).copy()
        for j in range(sites.shape[1]):
            c = sites[:, j].astype(np.uint64) + np.uint64(j + 1) * _GOLDEN
            h = _mix(h ^ _mix(c))
        comps = np.arange(1, n_components + 1, dtype=np.uint64) * _GOLDEN
        bits = _mix(h[:, None] + comps[None, :])
    return (bits >> _S11).astype(np.float64) * _INV53
