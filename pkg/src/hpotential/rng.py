"""Counter-based random numbers (Philox4x32-10), vectorized over streams.

Each draw is a pure function of ``(key, counter)``, so a walk's noise at a
given step does not depend on how walks are batched or scheduled.
"""

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)


def philox4x32(counter, key, rounds=10):
    """Philox4x32 block function.

    ``counter`` is a sequence of four uint32-valued arrays (broadcastable),
    ``key`` a pair of uint32 scalars or arrays. Returns four uint32 arrays.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK for c in counter)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0 = np.asarray(key[0], dtype=np.uint64) & _MASK
    k1 = np.asarray(key[1], dtype=np.uint64) & _MASK
    for _ in range(rounds):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT) ^ c1 ^ k0,
            p1 & _MASK,
            (p0 >> _SHIFT) ^ c3 ^ k1,
            p0 & _MASK,
        )
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return tuple(c.astype(np.uint32) for c in (c0, c1, c2, c3))


def split_seed(seed):
    """Split a 64-bit integer seed into a Philox key pair."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return (seed & 0xFFFFFFFF, seed >> 32)


def _unit_interval(hi, lo):
    # 53-bit uniform in (0, 1]; never exactly zero so log() is safe
    bits = (hi.astype(np.uint64) << _SHIFT) | lo.astype(np.uint64)
    return ((bits >> np.uint64(11)).astype(np.float64) + 1.0) * (1.0 / 9007199254740992.0)


def normal_pairs(seed, stream, step, lane=0):
    """Two independent standard normals per stream for one (step, lane).

    ``stream`` is an integer array (for example walk indices); ``step`` and
    ``lane`` are scalars. Box-Muller on two 53-bit uniforms.
    """
    stream = np.asarray(stream, dtype=np.uint64)
    key = split_seed(seed)
    w = philox4x32(
        (np.uint64(step), stream & _MASK, stream >> _SHIFT, np.uint64(lane)), key
    )
    u1 = _unit_interval(w[0], w[1])
    u2 = _unit_interval(w[2], w[3])
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    return rad * np.cos(ang), rad * np.sin(ang)


def standard_normals(seed, stream, step, count):
    """``count`` standard normals per stream, shape ``(count, len(stream))``."""
    stream = np.atleast_1d(stream)
    out = np.empty((count, stream.size))
    for lane in range((count + 1) // 2):
        a, b = normal_pairs(seed, stream, step, lane)
        out[2 * lane] = a
        if 2 * lane + 1 < count:
            out[2 * lane + 1] = b
    return out
