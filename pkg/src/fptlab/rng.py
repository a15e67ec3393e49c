"""
Reproducible, splittable random streams for numba kernels.

A stream is identified by (seed, stream_id, domain). Its 256-bit state is one
Philox4x64-10 block evaluated at key = (seed, stream_id) and counter
(0, domain, 0, 0); draws inside the stream then come from xoshiro256**.
Philox is a keyed bijection, so distinct (seed, stream_id, domain) give
unrelated states, and every path can be regenerated alone, in any order, on
any number of workers. The Philox block is bit-identical to
``numpy.random.Philox``.

Normals use a 256-layer ziggurat over 64-bit draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

__all__ = [
    "RngStream",
    "philox4x64",
    "seed_state",
    "next_u64",
    "next_double",
    "next_normal",
    "DOMAIN_BRIDGE",
    "DOMAIN_DIRECT",
    "DOMAIN_EULER",
]

DOMAIN_BRIDGE = 1
DOMAIN_DIRECT = 2
DOMAIN_EULER = 3

_U32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_TWO_M53 = 2.0**-53


# ---------------------------------------------------------------------------
# Philox4x64-10 (stream derivation)
# ---------------------------------------------------------------------------


@nb.njit(inline="always", cache=True)
def _mulhilo(a, b):
    a_lo = a & _U32
    a_hi = a >> _S32
    b_lo = b & _U32
    b_hi = b >> _S32
    p0 = a_lo * b_lo
    p1 = a_lo * b_hi
    p2 = a_hi * b_lo
    p3 = a_hi * b_hi
    mid = (p0 >> _S32) + (p1 & _U32) + (p2 & _U32)
    hi = p3 + (p1 >> _S32) + (p2 >> _S32) + (mid >> _S32)
    return hi, a * b


@nb.njit(cache=True)
def _philox_block(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    return c0, c1, c2, c3


def philox4x64(counter, key) -> np.ndarray:
    """One Philox4x64-10 block (4 x uint64) for a 4-word counter and 2-word key."""
    c = [np.uint64(x) for x in counter]
    k = [np.uint64(x) for x in key]
    return np.array(_philox_block(c[0], c[1], c[2], c[3], k[0], k[1]), dtype=np.uint64)


@nb.njit(cache=True)
def seed_state(seed, stream, domain, st):
    z = np.uint64(0)
    r0, r1, r2, r3 = _philox_block(z, np.uint64(domain), z, z, np.uint64(seed), np.uint64(stream))
    st[0] = r0
    st[1] = r1
    st[2] = r2
    st[3] = r3
    if (r0 | r1 | r2 | r3) == z:
        st[0] = np.uint64(1)


# ---------------------------------------------------------------------------
# xoshiro256** (draws within a stream)
# ---------------------------------------------------------------------------


@nb.njit(inline="always", cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@nb.njit(inline="always", cache=True)
def next_u64(st):
    s0 = st[0]
    s1 = st[1]
    s2 = st[2]
    s3 = st[3]
    result = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
    t = s1 << np.uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    st[0] = s0
    st[1] = s1
    st[2] = s2
    st[3] = s3
    return result


@nb.njit(inline="always", cache=True)
def next_double(st):
    """Uniform on [0, 1) with 53 random bits."""
    return np.float64(next_u64(st) >> np.uint64(11)) * _TWO_M53


# ---------------------------------------------------------------------------
# Ziggurat normal sampler (Marsaglia & Tsang layout, 256 layers, 52-bit)
# ---------------------------------------------------------------------------

_ZIG_R = 3.6541528853610088
_ZIG_V = 4.92867323399e-3


def _ziggurat_tables():
    m1 = 2.0**52
    ki = np.zeros(256, dtype=np.uint64)
    wi = np.zeros(256)
    fi = np.zeros(256)
    dn = tn = _ZIG_R
    q = _ZIG_V / math.exp(-0.5 * dn * dn)
    ki[0] = np.uint64(int((dn / q) * m1))
    ki[1] = np.uint64(0)
    wi[0] = q / m1
    wi[255] = dn / m1
    fi[0] = 1.0
    fi[255] = math.exp(-0.5 * dn * dn)
    for i in range(254, 0, -1):
        dn = math.sqrt(-2.0 * math.log(_ZIG_V / dn + math.exp(-0.5 * dn * dn)))
        ki[i + 1] = np.uint64(int((dn / tn) * m1))
        tn = dn
        fi[i] = math.exp(-0.5 * dn * dn)
        wi[i] = dn / m1
    return ki, wi, fi


_ZIG_K, _ZIG_W, _ZIG_F = _ziggurat_tables()
_ZIG_INV_R = 1.0 / _ZIG_R
_MASK52 = np.uint64(0x000FFFFFFFFFFFFF)


@nb.njit(cache=True)
def next_normal(st):
    while True:
        r = next_u64(st)
        idx = r & np.uint64(0xFF)
        r >>= np.uint64(8)
        sign = r & np.uint64(1)
        rabs = (r >> np.uint64(1)) & _MASK52
        x = np.float64(rabs) * _ZIG_W[idx]
        if sign:
            x = -x
        if rabs < _ZIG_K[idx]:
            return x
        if idx == 0:
            # tail beyond R
            while True:
                xx = -_ZIG_INV_R * math.log1p(-next_double(st))
                yy = -math.log1p(-next_double(st))
                if yy + yy > xx * xx:
                    if sign:
                        return -(_ZIG_R + xx)
                    return _ZIG_R + xx
        if (_ZIG_F[idx - 1] - _ZIG_F[idx]) * next_double(st) + _ZIG_F[idx] < math.exp(-0.5 * x * x):
            return x


@nb.njit(cache=True)
def _fill_normals(seed, stream, domain, out):
    st = np.empty(4, dtype=np.uint64)
    seed_state(seed, stream, domain, st)
    for i in range(out.shape[0]):
        out[i] = next_normal(st)


@nb.njit(cache=True)
def _fill_uniforms(seed, stream, domain, out):
    st = np.empty(4, dtype=np.uint64)
    seed_state(seed, stream, domain, st)
    for i in range(out.shape[0]):
        out[i] = next_double(st)


@nb.njit(cache=True)
def _fill_raw(seed, stream, domain, out):
    st = np.empty(4, dtype=np.uint64)
    seed_state(seed, stream, domain, st)
    for i in range(out.shape[0]):
        out[i] = next_u64(st)


def _u64(x: int) -> int:
    if not (-(2**63) <= int(x) < 2**64):
        raise ValueError(f"{x} does not fit in 64 bits")
    return int(x) % 2**64


@dataclass(frozen=True)
class RngStream:
    """One reproducible stream: (seed, stream_id) fixes every draw.

    ``domain`` separates the independent uses of the same stream id (bridge
    sampling, direct simulation, Euler cross-check).
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", _u64(self.seed))
        object.__setattr__(self, "stream_id", _u64(self.stream_id))

    @property
    def key(self) -> tuple[np.uint64, np.uint64]:
        return np.uint64(self.seed), np.uint64(self.stream_id)

    def state(self, domain: int = DOMAIN_BRIDGE) -> np.ndarray:
        st = np.empty(4, dtype=np.uint64)
        seed_state(*self.key, domain, st)
        return st

    def raw(self, n: int, domain: int = DOMAIN_BRIDGE) -> np.ndarray:
        out = np.empty(int(n), dtype=np.uint64)
        _fill_raw(*self.key, domain, out)
        return out

    def normals(self, n: int, domain: int = DOMAIN_BRIDGE) -> np.ndarray:
        out = np.empty(int(n))
        _fill_normals(*self.key, domain, out)
        return out

    def uniforms(self, n: int, domain: int = DOMAIN_DIRECT) -> np.ndarray:
        out = np.empty(int(n))
        _fill_uniforms(*self.key, domain, out)
        return out

    def spawn(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)
