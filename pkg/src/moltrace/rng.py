"""Counter-seeded random streams for reproducible Monte Carlo.

Every trajectory gets its own xoshiro256++ stream derived from
(master_seed, stream_index) through splitmix64, so results are independent
of how work is scheduled across workers.  The same generator backs both the
compiled tracing kernels and the Python-level API, keeping draws
bit-identical between the two entry points.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, uint64

_MASK64 = (1 << 64) - 1
_GOLDEN = uint64(0x9E3779B97F4A7C15)
_STREAM_SALT = uint64(0xD1B54A32D192ED03)
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True, nogil=True, inline="always")
def _splitmix64(z):
    z = (z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB)
    return z ^ (z >> uint64(31))


@njit(cache=True, nogil=True)
def seed_state(master_seed, stream_index):
    """256-bit xoshiro state for stream `stream_index` of `master_seed`."""
    out = np.empty(4, dtype=np.uint64)
    z = _splitmix64(uint64(master_seed) + _GOLDEN)
    z = _splitmix64(z ^ (uint64(stream_index) * _STREAM_SALT + uint64(1)))
    for i in range(4):
        z = z + _GOLDEN
        out[i] = _splitmix64(z)
    if out[0] | out[1] | out[2] | out[3] == uint64(0):
        out[0] = _GOLDEN  # the all-zero state is a fixed point of xoshiro
    return out


@njit(cache=True, nogil=True, inline="always")
def _rotl(x, k):
    return (x << k) | (x >> (uint64(64) - k))


@njit(cache=True, nogil=True, inline="always")
def next_u64(state):
    result = _rotl(state[0] + state[3], uint64(23)) + state[0]
    t = state[1] << uint64(17)
    state[2] ^= state[0]
    state[3] ^= state[1]
    state[1] ^= state[2]
    state[0] ^= state[3]
    state[2] ^= t
    state[3] = _rotl(state[3], uint64(45))
    return result


@njit(cache=True, nogil=True, inline="always")
def uniform(state):
    """Uniform double in [0, 1)."""
    return (next_u64(state) >> uint64(11)) * _INV_2_53


@njit(cache=True, nogil=True, inline="always")
def uniform_open(state):
    """Uniform double in (0, 1] (safe under log)."""
    return ((next_u64(state) >> uint64(11)) + uint64(1)) * _INV_2_53


@njit(cache=True, nogil=True, inline="always")
def normal(state):
    """Standard normal via Box-Muller (two uniforms per draw)."""
    u1 = uniform_open(state)
    u2 = uniform(state)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@njit(cache=True, nogil=True)
def _fill_uniform(state, out):
    for i in range(out.size):
        out[i] = uniform(state)


@njit(cache=True, nogil=True)
def _fill_normal(state, out):
    for i in range(out.size):
        out[i] = normal(state)


class Stream:
    """One deterministic random stream, addressed by (master_seed, index)."""

    def __init__(self, master_seed: int, stream_index: int = 0):
        self._state = seed_state(
            np.uint64(int(master_seed) & _MASK64),
            np.uint64(int(stream_index) & _MASK64),
        )

    @property
    def state(self) -> np.ndarray:
        return self._state

    def uniform(self) -> float:
        return uniform(self._state)

    def normal(self) -> float:
        return normal(self._state)

    def uniforms(self, n: int) -> np.ndarray:
        out = np.empty(int(n))
        _fill_uniform(self._state, out)
        return out

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(int(n))
        _fill_normal(self._state, out)
        return out
