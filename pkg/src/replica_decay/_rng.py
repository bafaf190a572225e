"""Counter-derived xoshiro256++ streams usable inside the kernels.

Parallel replications need independent, order-independent streams that behave
identically under the numba and pure-Python backends, so the generator is
implemented here on raw uint64 state instead of going through numpy's
``Generator`` machinery (which numba kernels cannot call).

Stream derivation: each (seed, stream_id) pair is hashed through the splitmix64
finalizer into a 256-bit xoshiro256++ state (the seeding procedure recommended
by the xoshiro authors). Distinct ids give statistically independent streams.
"""

import math

import numpy as np

from ._backend import jit_inline

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15

U64 = np.uint64

# 2^-53, to map the top 53 bits of a draw into [0, 1)
_INV53 = 1.1102230246251565e-16


def _mix64(z: int) -> int:
    """splitmix64 finalizer on Python ints (derivation only, never in kernels)."""
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_stream(seed: int, stream_id: int) -> np.ndarray:
    """Return a fresh uint64[4] xoshiro256++ state for (seed, stream_id)."""
    z = (int(seed) + _GAMMA * (int(stream_id) + 1)) & _MASK64
    state = np.empty(4, dtype=np.uint64)
    for i in range(4):
        z = (z + _GAMMA) & _MASK64
        state[i] = _mix64(z)
    if not state.any():  # forbidden all-zero state
        state[0] = 1
    return state


def _rotl(x, k):
    return (x << k) | (x >> (U64(64) - k))


def xo_next(state):
    """Advance a uint64[4] state, returning one xoshiro256++ output word."""
    result = _rotl(state[0] + state[3], U64(23)) + state[0]
    t = state[1] << U64(17)
    state[2] ^= state[0]
    state[3] ^= state[1]
    state[1] ^= state[2]
    state[0] ^= state[3]
    state[2] ^= t
    state[3] = _rotl(state[3], U64(45))
    return result


def uniform01(state):
    """Draw in [0, 1) from the top 53 bits."""
    return float(xo_next(state) >> U64(11)) * _INV53


def exp_unit(state):
    """Draw a unit-rate exponential; uses (0, 1] so log never sees zero."""
    u = (float(xo_next(state) >> U64(11)) + 1.0) * _INV53
    return -math.log(u)


# Plain-Python handles for tests and the fallback benchmark; the module-level
# names are the ones kernels resolve, so they get jitted in numba mode.
xo_next_py = xo_next
uniform01_py = uniform01
exp_unit_py = exp_unit

_rotl = jit_inline(_rotl)
xo_next = jit_inline(xo_next)
uniform01 = jit_inline(uniform01)
exp_unit = jit_inline(exp_unit)
