import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxstream.pngio import PngError, read_png, write_png


def roundtrip(tmp_path, arr):
    p = tmp_path / "x.png"
    write_png(p, arr)
    return read_png(p)


def test_rgb8_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (13, 7, 3), dtype=np.uint8)
    assert np.array_equal(roundtrip(tmp_path, img), img)


def test_gray8_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, (5, 9), dtype=np.uint8)
    assert np.array_equal(roundtrip(tmp_path, img), img)


def test_rgb16_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    img = rng.integers(0, 65536, (6, 4, 3), dtype=np.uint16)
    out = roundtrip(tmp_path, img)
    assert out.dtype == np.uint16
    assert np.array_equal(out, img)


def test_signature_present(tmp_path):
    p = tmp_path / "sig.png"
    write_png(p, np.zeros((2, 2), dtype=np.uint8))
    assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_corrupt_crc_rejected(tmp_path):
    p = tmp_path / "bad.png"
    write_png(p, np.zeros((4, 4, 3), dtype=np.uint8))
    raw = bytearray(p.read_bytes())
    raw[-5] ^= 0xFF  # inside IEND/CRC tail
    p.write_bytes(bytes(raw))
    with pytest.raises(PngError):
        read_png(p)


def test_truncated_rejected(tmp_path):
    p = tmp_path / "short.png"
    write_png(p, np.zeros((4, 4, 3), dtype=np.uint8))
    p.write_bytes(p.read_bytes()[:20])
    with pytest.raises(PngError):
        read_png(p)


def test_bad_dtype_rejected(tmp_path):
    with pytest.raises((PngError, ValueError)):
        write_png(tmp_path / "f.png", np.zeros((2, 2), dtype=np.float32))


def test_zlib_stream_is_standard(tmp_path):
    # the IDAT payload must be plain zlib so any PNG reader can decode it
    p = tmp_path / "z.png"
    img = np.arange(48, dtype=np.uint8).reshape(4, 4, 3)
    write_png(p, img)
    raw = p.read_bytes()
    i = raw.index(b"IDAT")
    size = int.from_bytes(raw[i - 4 : i], "big")
    payload = raw[i + 4 : i + 4 + size]
    decompressed = zlib.decompress(payload)
    # 4 scanlines, each 1 filter byte + 12 pixel bytes
    assert len(decompressed) == 4 * (1 + 12)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(1, 12),
    st.integers(1, 12),
    st.sampled_from([None, 3]),
    st.integers(0, 2**32 - 1),
)
def test_roundtrip_property(tmp_path_factory, h, w, channels, seed):
    rng = np.random.default_rng(seed)
    shape = (h, w) if channels is None else (h, w, channels)
    img = rng.integers(0, 256, shape, dtype=np.uint8)
    out = roundtrip(tmp_path_factory.mktemp("png"), img)
    assert np.array_equal(out, img)
