import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parahydra.bitstream import MAGIC, VERSION, BitstreamHeader, pack, parse_header, serialize_header, unpack
from parahydra.nn import FormatError
from parahydra.rangecoder import CorruptStreamError


def _header():
    return BitstreamHeader(2, 30, 41, 64, 64, 1, 2, [[3, 1, 2], [4, 1, 2]])


@st.composite
def headers(draw):
    k = draw(st.integers(1, 8))
    slices = draw(st.integers(1, 10))
    u16 = st.integers(0, 2**16 - 1)
    lengths = [[draw(st.integers(0, 2**32 - 1)) for _ in range(1 + slices)] for _ in range(k)]
    return BitstreamHeader(k, draw(u16), draw(u16), draw(u16), draw(u16), draw(st.integers(0, 255)), slices, lengths)


class TestHeader:
    def test_byte_layout(self):
        h = BitstreamHeader(2, 30, 41, 64, 64, 1, 2, [[5, 6, 7], [8, 9, 258]])
        expected = (
            b"PHYD"
            + bytes([1, 2])
            + bytes([30, 0, 41, 0, 64, 0, 64, 0])
            + bytes([1, 2])
            + bytes([5, 0, 0, 0, 6, 0, 0, 0, 7, 0, 0, 0])
            + bytes([8, 0, 0, 0, 9, 0, 0, 0, 2, 1, 0, 0])
        )
        assert serialize_header(h) == expected
        assert h.size == len(expected) == 40

    @settings(max_examples=200)
    @given(headers())
    def test_roundtrip(self, h):
        buf = serialize_header(h)
        assert len(buf) == h.size
        assert parse_header(buf) == h

    def test_k6_declares_six_groups(self):
        lengths = [[10 * v + s for s in range(4)] for v in range(6)]
        h = parse_header(serialize_header(BitstreamHeader(6, 64, 64, 64, 64, 0, 3, lengths)))
        assert len(h.seg_lengths) == 6
        assert h.seg_lengths == lengths

    def test_bad_magic(self):
        buf = bytearray(serialize_header(_header()))
        buf[:4] = b"PHYX"
        with pytest.raises(FormatError, match="magic"):
            parse_header(bytes(buf))

    def test_bad_version(self):
        buf = bytearray(serialize_header(_header()))
        buf[4] = VERSION + 1
        with pytest.raises(FormatError, match="version"):
            parse_header(bytes(buf))

    @pytest.mark.parametrize("keep", [0, 3, 15, 39])
    def test_truncated(self, keep):
        buf = serialize_header(BitstreamHeader(2, 1, 1, 64, 64, 0, 2, [[1, 1, 1], [1, 1, 1]]))
        with pytest.raises(FormatError, match="truncated"):
            parse_header(buf[:keep])

    def test_zero_views_rejected(self):
        buf = bytearray(serialize_header(_header()))
        buf[5] = 0
        with pytest.raises(FormatError):
            parse_header(bytes(buf))

    def test_inconsistent_table_rejected(self):
        with pytest.raises(ValueError):
            serialize_header(BitstreamHeader(2, 1, 1, 64, 64, 0, 2, [[1, 1, 1]]))


class TestFraming:
    def _segments(self, rng, k=3, slices=2):
        return [[rng.bytes(int(rng.integers(0, 20))) for _ in range(1 + slices)] for _ in range(k)]

    def test_pack_unpack(self, rng):
        segs = self._segments(rng)
        h = BitstreamHeader(3, 64, 64, 64, 64, 2, 2)
        buf = pack(h, segs)
        h2, segs2 = unpack(buf)
        assert segs2 == segs
        assert h2.seg_lengths == [[len(s) for s in v] for v in segs]
        assert buf.startswith(MAGIC)
        assert len(buf) == h.size + h.payload_size

    def test_declared_lengths_must_match(self, rng):
        buf = pack(BitstreamHeader(3, 64, 64, 64, 64, 2, 2), self._segments(rng))
        with pytest.raises(CorruptStreamError, match="declared"):
            unpack(buf[:-1])
        with pytest.raises(CorruptStreamError, match="declared"):
            unpack(buf + b"\x00")

    def test_corrupted_length_field(self, rng):
        buf = bytearray(pack(BitstreamHeader(3, 64, 64, 64, 64, 2, 2), self._segments(rng)))
        buf[16] ^= 0x40
        with pytest.raises(CorruptStreamError):
            unpack(bytes(buf))

    @settings(max_examples=200)
    @given(st.binary(max_size=80))
    def test_garbage_never_crashes(self, blob):
        try:
            unpack(MAGIC + bytes([VERSION]) + blob)
        except (FormatError, CorruptStreamError):
            pass
