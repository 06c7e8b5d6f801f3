"""Carry-propagating range coder over 16-bit frequency tables.

Symbols live in ``[-SUPPORT, SUPPORT]``; values beyond are folded into the
extreme bucket and the excess magnitude follows as an order-0 Exp-Golomb code
of equiprobable bits, so every integer is coded losslessly.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION
SUPPORT = 64
NSYM = 2 * SUPPORT + 1
SIGMA_MIN = 0.11
MIN_PROB = 1.0 / TOTAL

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
# Bytes the encoder leaves implicit at the end of a segment; the decoder reads
# them as zeros.
FLUSH_PAD = 3


class CorruptStreamError(ValueError):
    """Byte stream inconsistent with the supplied models."""


class ContractError(ValueError):
    """Model parameters violate a coding precondition."""


# ---------------------------------------------------------------------------
# fixed CDF approximations (identical tables on every platform)
# ---------------------------------------------------------------------------

_ERFC_COEF = (
    -1.26551223,
    1.00002368,
    0.37409196,
    0.09678418,
    -0.18628806,
    0.27886807,
    -1.13520398,
    1.48851587,
    -0.82215223,
    0.17087277,
)


def _erfc(x: np.ndarray) -> np.ndarray:
    """Chebyshev-fitted erfc, fractional error below 1.2e-7 everywhere."""
    z = np.abs(x)
    t = 1.0 / (1.0 + 0.5 * z)
    poly = np.full_like(t, _ERFC_COEF[-1])
    for c in _ERFC_COEF[-2::-1]:
        poly = c + t * poly
    ans = t * np.exp(-z * z + poly)
    return np.where(x >= 0, ans, 2.0 - ans)


def normal_cdf(x: np.ndarray) -> np.ndarray:
    return 0.5 * _erfc(-np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


def logistic_cdf(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


_GRID = np.arange(-SUPPORT, SUPPORT + 1, dtype=np.float64)


def _interval_pmf(cdf, loc: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """pmf over the support for each (loc, scale) row; tails folded into the ends.

    Interior buckets use the upper-tail form around ``loc`` so that the result is
    bit-symmetric about an integer location.
    """
    loc = np.asarray(loc, dtype=np.float64).reshape(-1, 1)
    scale = np.asarray(scale, dtype=np.float64).reshape(-1, 1)
    d = np.abs(_GRID[None, :] - loc)
    pmf = cdf((0.5 - d) / scale) - cdf((-0.5 - d) / scale)
    pmf[:, 0] = cdf((-SUPPORT + 0.5 - loc[:, 0]) / scale[:, 0])
    pmf[:, -1] = cdf((loc[:, 0] - SUPPORT + 0.5) / scale[:, 0])
    return np.clip(pmf, 0.0, 1.0)


def quantize_pmf(pmf: np.ndarray) -> np.ndarray:
    """Integer frequencies, every bucket >= 1, each row summing to exactly 2**16."""
    pmf = np.atleast_2d(pmf)
    n = pmf.shape[1]
    freq = 1 + np.floor(pmf * (TOTAL - n)).astype(np.int64)
    deficit = TOTAL - freq.sum(axis=1)
    freq[np.arange(len(freq)), np.argmax(pmf, axis=1)] += deficit
    return freq


def gaussian_pmf(mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < SIGMA_MIN) or not np.all(np.isfinite(sigma)):
        raise ContractError(f"gaussian tables need sigma >= {SIGMA_MIN}")
    return _interval_pmf(normal_cdf, mu, sigma)


def build_gaussian_tables(mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Quantized frequency tables [n, NSYM] for discretized Gaussians."""
    return quantize_pmf(gaussian_pmf(mu, sigma))


def logistic_pmf(loc: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return _interval_pmf(logistic_cdf, loc, scale)


def build_logistic_tables(loc: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return quantize_pmf(logistic_pmf(loc, scale))


def cumulative(freq: np.ndarray) -> np.ndarray:
    """[n, NSYM] frequencies -> [n, NSYM + 1] cumulative starts."""
    freq = np.atleast_2d(freq)
    cum = np.zeros((freq.shape[0], freq.shape[1] + 1), dtype=np.int64)
    np.cumsum(freq, axis=1, out=cum[:, 1:])
    return cum


def escape_bits(values: np.ndarray) -> np.ndarray:
    """Extra equiprobable bits spent on values at or beyond the folded ends."""
    v = np.asarray(values, dtype=np.int64)
    excess = np.abs(v) - SUPPORT
    out = np.zeros(v.shape, dtype=np.int64)
    esc = excess >= 0
    if esc.any():
        m = excess[esc] + 1
        out[esc] = 2 * (np.floor(np.log2(m)).astype(np.int64)) + 1
    return out


def symbol_bits(values: np.ndarray, pmf: np.ndarray) -> np.ndarray:
    """Ideal code length of integer ``values`` under per-row ``pmf`` (floored at 2**-16)."""
    v = np.asarray(values, dtype=np.int64).reshape(-1)
    idx = np.clip(v, -SUPPORT, SUPPORT) + SUPPORT
    p = np.maximum(pmf[np.arange(len(v)), idx], MIN_PROB)
    return -np.log2(p) + escape_bits(v)


# ---------------------------------------------------------------------------
# coder
# ---------------------------------------------------------------------------


class RangeEncoder:
    def __init__(self) -> None:
        self.low = 0
        self.range = _MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def encode(self, start: int, freq: int) -> None:
        r = self.range >> PRECISION
        self.low += r * start
        self.range = r * freq
        while self.range < _TOP:
            self.range = (self.range << 8) & _MASK32
            self._shift_low()

    def encode_bit(self, bit: int) -> None:
        half = TOTAL >> 1
        self.encode(half if bit else 0, half)

    def _shift_low(self) -> None:
        if self.low < 0xFF000000 or self.low > _MASK32:
            carry = self.low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low << 8) & _MASK32

    def finish(self) -> bytes:
        # Any value in [low, low + range) identifies the stream.  Rounding low up
        # to a multiple of 2**24 stays inside it (range >= 2**24) and leaves
        # FLUSH_PAD trailing zero bytes, which are not written.
        self.low = (self.low + _TOP - 1) & ~(_TOP - 1)
        self._shift_low()
        self._shift_low()
        # the first emitted byte is always the zero initial cache
        return bytes(self.out[1:])


class RangeDecoder:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next()

    def _next(self) -> int:
        if self.pos >= len(self.data) + FLUSH_PAD:
            raise CorruptStreamError(f"range decoder ran past end of segment at byte offset {self.pos}")
        b = self.data[self.pos] if self.pos < len(self.data) else 0
        self.pos += 1
        return b

    @property
    def exhausted(self) -> bool:
        """True when exactly the segment bytes plus the implicit flush were read."""
        return self.pos == len(self.data) + FLUSH_PAD

    def decode_target(self) -> int:
        self._r = self.range >> PRECISION
        v = self.code // self._r
        if v >= TOTAL:
            raise CorruptStreamError(f"range decoder state invalid at byte offset {self.pos}")
        return v

    def consume(self, start: int, freq: int) -> None:
        self.code -= self._r * start
        self.range = self._r * freq
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next()) & _MASK32
            self.range = (self.range << 8) & _MASK32

    def decode_bit(self) -> int:
        half = TOTAL >> 1
        bit = int(self.decode_target() >= half)
        self.consume(half if bit else 0, half)
        return bit


def _write_exp_golomb(enc: RangeEncoder, n: int) -> None:
    m = n + 1
    nbits = m.bit_length() - 1
    for _ in range(nbits):
        enc.encode_bit(0)
    for i in range(nbits, -1, -1):
        enc.encode_bit((m >> i) & 1)


def _read_exp_golomb(dec: RangeDecoder) -> int:
    nbits = 0
    while dec.decode_bit() == 0:
        nbits += 1
        if nbits > 40:
            raise CorruptStreamError(f"escape code too long at byte offset {dec.pos}")
    m = 1
    for _ in range(nbits):
        m = (m << 1) | dec.decode_bit()
    return m - 1


def encode_into(enc: RangeEncoder, values: Sequence[int], cum: np.ndarray) -> None:
    """Append integer ``values`` coded with per-value cumulative tables ``cum``."""
    cum_rows = cum.tolist()
    for v, row in zip(np.asarray(values, dtype=np.int64).tolist(), cum_rows):
        idx = min(max(v, -SUPPORT), SUPPORT) + SUPPORT
        enc.encode(row[idx], row[idx + 1] - row[idx])
        if idx == 0:
            _write_exp_golomb(enc, -SUPPORT - v)
        elif idx == NSYM - 1:
            _write_exp_golomb(enc, v - SUPPORT)


def decode_from(dec: RangeDecoder, cum: np.ndarray) -> np.ndarray:
    from bisect import bisect_right

    out = []
    for row in cum.tolist():
        target = dec.decode_target()
        idx = bisect_right(row, target) - 1
        dec.consume(row[idx], row[idx + 1] - row[idx])
        v = idx - SUPPORT
        if idx == 0:
            v = -SUPPORT - _read_exp_golomb(dec)
        elif idx == NSYM - 1:
            v = SUPPORT + _read_exp_golomb(dec)
        out.append(v)
    return np.array(out, dtype=np.int64)


def encode_symbols(values: Sequence[int], freq: np.ndarray) -> bytes:
    """Code ``values`` with one frequency table row per value."""
    values = np.asarray(values, dtype=np.int64).reshape(-1)
    freq = np.atleast_2d(freq)
    if len(values) != len(freq):
        raise ContractError(f"{len(values)} values but {len(freq)} tables")
    enc = RangeEncoder()
    if len(values):
        encode_into(enc, values, cumulative(freq))
    return enc.finish()


def decode_symbols(data: bytes, freq: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`encode_symbols`; must consume every byte."""
    freq = np.atleast_2d(freq)
    dec = RangeDecoder(data)
    out = decode_from(dec, cumulative(freq)) if freq.shape[0] and freq.shape[1] else np.zeros(0, np.int64)
    if not dec.exhausted:
        raise CorruptStreamError(f"segment has {len(data) + FLUSH_PAD - dec.pos} unread bytes at offset {dec.pos}")
    return out
