"""Counter-based random streams.

Every random number used by a simulator is addressed by
``(master_seed, replica, particle, tag, index)``.  The generator is
Philox4x64-10; stream ``(seed, replica, particle, tag)`` is bit-identical to
``numpy.random.Philox(counter=[0, particle, replica, 0], key=[seed, tag])``,
so numpy serves as the reference implementation in the tests.

Because nothing depends on call order, replicas may run on any number of
threads and extra particles can be appended later without disturbing the
ones already drawn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numba import njit

__all__ = [
    "Tag",
    "RngContract",
    "philox_block",
    "stream_normals",
    "stream_uniforms",
    "normal_at",
]

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / 9007199254740992.0


class Tag(IntEnum):
    """Purpose tags; each tag keys an independent family of streams."""

    INIT = 1
    BM = 2
    AUX_INIT = 3
    AUX_BM = 4
    AUX2_INIT = 5
    AUX2_BM = 6
    ETA0 = 7
    SPDE = 8
    GENERIC = 9


@dataclass(frozen=True)
class RngContract:
    master_seed: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("rng.seed must be an unsigned 64-bit integer")

    @property
    def key(self) -> np.uint64:
        return np.uint64(self.master_seed)

    def normals(self, replica: int, particle: int, tag: int, n: int) -> np.ndarray:
        out = np.empty(n)
        stream_normals(self.key, np.uint64(replica), np.uint64(particle), np.uint64(tag), 0, out)
        return out

    def uniforms(self, replica: int, particle: int, tag: int, n: int) -> np.ndarray:
        out = np.empty(n)
        stream_uniforms(self.key, np.uint64(replica), np.uint64(particle), np.uint64(tag), 0, out)
        return out

    def numpy_generator(self, replica: int, particle: int, tag: int) -> np.random.Generator:
        """A numpy Generator on the same raw bit stream (for library samplers)."""
        bg = np.random.Philox(counter=np.array([0, particle, replica, 0], dtype=np.uint64),
                              key=np.array([self.master_seed, int(tag)], dtype=np.uint64))
        return np.random.Generator(bg)


@njit(inline="always")
def _mulhilo(a, b):
    lo = a * b
    a0 = a & _MASK32
    a1 = a >> _S32
    b0 = b & _MASK32
    b1 = b >> _S32
    p00 = a0 * b0
    p01 = a0 * b1
    p10 = a1 * b0
    p11 = a1 * b1
    mid = (p00 >> _S32) + (p01 & _MASK32) + (p10 & _MASK32)
    hi = p11 + (p01 >> _S32) + (p10 >> _S32) + (mid >> _S32)
    return hi, lo


@njit(cache=True)
def philox_block(seed, tag, replica, particle, block):
    """Four raw 64-bit words of block ``block`` of a stream."""
    c0 = np.uint64(block) + _ONE
    c1 = np.uint64(particle)
    c2 = np.uint64(replica)
    c3 = np.uint64(0)
    k0 = np.uint64(seed)
    k1 = np.uint64(tag)
    for r in range(10):
        if r > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@njit(inline="always")
def _u01(x):
    # 53-bit uniform on [0, 1)
    return float(x >> _S11) * _INV_2_53


@njit(inline="always")
def _box_muller(x0, x1):
    u1 = 1.0 - _u01(x0)  # (0, 1]
    u2 = _u01(x1)
    r = math.sqrt(-2.0 * math.log(u1))
    th = _TWO_PI * u2
    return r * math.cos(th), r * math.sin(th)


@njit(cache=True)
def stream_normals(seed, replica, particle, tag, start, out):
    """Fill ``out`` with standard normals ``start, start+1, ...`` of a stream.

    Normal ``n`` lives in block ``n // 4``; words (0,1) and (2,3) of a block
    are Box-Muller pairs.
    """
    n = out.shape[0]
    i = 0
    pos = start
    while i < n:
        block = pos // 4
        w0, w1, w2, w3 = philox_block(seed, tag, replica, particle, block)
        z0, z1 = _box_muller(w0, w1)
        z2, z3 = _box_muller(w2, w3)
        off = pos - block * 4
        for j in range(off, 4):
            if i >= n:
                break
            if j == 0:
                out[i] = z0
            elif j == 1:
                out[i] = z1
            elif j == 2:
                out[i] = z2
            else:
                out[i] = z3
            i += 1
            pos += 1


@njit(cache=True)
def stream_uniforms(seed, replica, particle, tag, start, out):
    n = out.shape[0]
    i = 0
    pos = start
    while i < n:
        block = pos // 4
        w = philox_block(seed, tag, replica, particle, block)
        off = pos - block * 4
        for j in range(off, 4):
            if i >= n:
                break
            out[i] = _u01(w[j])
            i += 1
            pos += 1


@njit(cache=True)
def normal_at(seed, replica, particle, tag, index):
    block = index // 4
    w0, w1, w2, w3 = philox_block(seed, tag, replica, particle, block)
    j = index - block * 4
    if j < 2:
        z0, z1 = _box_muller(w0, w1)
    else:
        z0, z1 = _box_muller(w2, w3)
    return z0 if j % 2 == 0 else z1
