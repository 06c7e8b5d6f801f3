"""Framed multi-view bitstream.

Layout (all integers little-endian)::

    offset  size  field
    0       4     magic "PHYD"
    4       1     version (1: anchors at (i + j) even)
    5       1     K, number of views
    6       2     original height
    8       2     original width
    10      2     padded height
    12      2     padded width
    14      1     lambda index (0..3 into 1024/2048/4096/8192, 255 = other)
    15      1     l, number of latent slices
    16      4*K*(1+l)  per view: z segment length, then l slice segment lengths

followed by the segments in the same order (view 0 z, view 0 slice 1, ...,
view K-1 slice l). Each slice segment codes anchors then non-anchors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .nn import FormatError
from .rangecoder import CorruptStreamError

MAGIC = b"PHYD"
VERSION = 1
_FIXED = struct.Struct("<4sBBHHHHBB")


@dataclass
class BitstreamHeader:
    k: int
    orig_h: int
    orig_w: int
    pad_h: int
    pad_w: int
    lambda_index: int
    n_slices: int
    # seg_lengths[view] == [z_len, slice_1_len, ..., slice_l_len]
    seg_lengths: list[list[int]] = field(default_factory=list)

    @property
    def size(self) -> int:
        return _FIXED.size + 4 * self.k * (1 + self.n_slices)

    @property
    def payload_size(self) -> int:
        return sum(sum(v) for v in self.seg_lengths)


def serialize_header(h: BitstreamHeader) -> bytes:
    if len(h.seg_lengths) != h.k or any(len(v) != 1 + h.n_slices for v in h.seg_lengths):
        raise ValueError("segment length table does not match K and slice count")
    if not 1 <= h.k <= 255 or not 1 <= h.n_slices <= 255:
        raise ValueError(f"K={h.k} and slices={h.n_slices} must be in 1..255")
    out = [_FIXED.pack(MAGIC, VERSION, h.k, h.orig_h, h.orig_w, h.pad_h, h.pad_w, h.lambda_index, h.n_slices)]
    for lengths in h.seg_lengths:
        out.append(struct.pack(f"<{len(lengths)}I", *lengths))
    return b"".join(out)


def parse_header(buf: bytes) -> BitstreamHeader:
    if len(buf) < _FIXED.size:
        raise FormatError(f"truncated header: {len(buf)} bytes")
    magic, version, k, oh, ow, ph, pw, lam, l = _FIXED.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported bitstream version {version}")
    if k < 1 or l < 1:
        raise FormatError(f"invalid K={k} or slice count={l}")
    need = _FIXED.size + 4 * k * (1 + l)
    if len(buf) < need:
        raise FormatError(f"truncated header: need {need} bytes, have {len(buf)}")
    flat = struct.unpack_from(f"<{k * (1 + l)}I", buf, _FIXED.size)
    groups = [list(flat[i * (1 + l) : (i + 1) * (1 + l)]) for i in range(k)]
    return BitstreamHeader(k, oh, ow, ph, pw, lam, l, groups)


def pack(h: BitstreamHeader, segments: list[list[bytes]]) -> bytes:
    """Header plus segments; fills in ``h.seg_lengths`` from the segments."""
    h.seg_lengths = [[len(s) for s in view] for view in segments]
    return serialize_header(h) + b"".join(b"".join(view) for view in segments)


def unpack(buf: bytes) -> tuple[BitstreamHeader, list[list[bytes]]]:
    h = parse_header(buf)
    pos = h.size
    if pos + h.payload_size != len(buf):
        raise CorruptStreamError(
            f"declared payload {h.payload_size} bytes but stream carries {len(buf) - pos} after the header"
        )
    views = []
    for lengths in h.seg_lengths:
        segs = []
        for n in lengths:
            segs.append(buf[pos : pos + n])
            pos += n
        views.append(segs)
    return h, views
