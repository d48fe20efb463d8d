"""Minimal PNG reader/writer for the image shapes this package emits.

Supports 8-bit grayscale, 8-bit RGB and 16-bit RGB, non-interlaced.
Writing uses filter type 0 on every scanline; reading understands all
five standard filters so externally produced files also load.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class PngError(ValueError):
    pass


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def write_png(path, image: np.ndarray) -> None:
    """Write a (H,W) uint8, (H,W,3) uint8 or (H,W,3) uint16 array as PNG."""
    image = np.ascontiguousarray(image)
    if image.ndim == 2 and image.dtype == np.uint8:
        color_type, bit_depth = 0, 8
    elif image.ndim == 3 and image.shape[2] == 3 and image.dtype == np.uint8:
        color_type, bit_depth = 2, 8
    elif image.ndim == 3 and image.shape[2] == 3 and image.dtype == np.uint16:
        color_type, bit_depth = 2, 16
    else:
        raise PngError(f"unsupported image shape/dtype: {image.shape} {image.dtype}")
    h, w = image.shape[:2]
    if bit_depth == 16:
        raw_rows = image.astype(">u2").tobytes()
    else:
        raw_rows = image.tobytes()
    stride = w * (3 if color_type == 2 else 1) * (bit_depth // 8)
    scanlines = bytearray()
    for r in range(h):
        scanlines.append(0)  # filter: None
        scanlines += raw_rows[r * stride : (r + 1) * stride]
    ihdr = struct.pack(">IIBBBBB", w, h, bit_depth, color_type, 0, 0, 0)
    data = _SIGNATURE + _chunk(b"IHDR", ihdr)
    data += _chunk(b"IDAT", zlib.compress(bytes(scanlines), 6))
    data += _chunk(b"IEND", b"")
    with open(path, "wb") as f:
        f.write(data)


def _unfilter(scanlines: bytes, h: int, w: int, channels: int, bytes_per_sample: int) -> bytes:
    bpp = channels * bytes_per_sample
    stride = w * bpp
    out = bytearray(h * stride)
    pos = 0
    prev_start = None
    for r in range(h):
        ftype = scanlines[pos]
        pos += 1
        row = bytearray(scanlines[pos : pos + stride])
        pos += stride
        start = r * stride
        if ftype == 0:
            pass
        elif ftype == 1:  # Sub
            for i in range(bpp, stride):
                row[i] = (row[i] + row[i - bpp]) & 0xFF
        elif ftype == 2:  # Up
            if prev_start is not None:
                for i in range(stride):
                    row[i] = (row[i] + out[prev_start + i]) & 0xFF
        elif ftype == 3:  # Average
            for i in range(stride):
                left = row[i - bpp] if i >= bpp else 0
                up = out[prev_start + i] if prev_start is not None else 0
                row[i] = (row[i] + ((left + up) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth
            for i in range(stride):
                a = row[i - bpp] if i >= bpp else 0
                b = out[prev_start + i] if prev_start is not None else 0
                c = out[prev_start + i - bpp] if (prev_start is not None and i >= bpp) else 0
                p = a + b - c
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
                row[i] = (row[i] + pred) & 0xFF
        else:
            raise PngError(f"unknown filter type {ftype}")
        out[start : start + stride] = row
        prev_start = start
    return bytes(out)


def read_png(path) -> np.ndarray:
    """Read a PNG written by write_png (or any non-interlaced L8/RGB8/RGB16)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != _SIGNATURE:
        raise PngError("not a PNG file")
    pos = 8
    width = height = bit_depth = color_type = None
    idat = bytearray()
    while pos < len(data):
        if pos + 12 > len(data):
            raise PngError("truncated chunk header")
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        tag = data[pos + 4 : pos + 8]
        payload = data[pos + 8 : pos + 8 + length]
        if pos + 12 + length > len(data):
            raise PngError("truncated chunk payload")
        (stored_crc,) = struct.unpack(">I", data[pos + 8 + length : pos + 12 + length])
        if zlib.crc32(tag + payload) != stored_crc:
            raise PngError(f"chunk {tag!r} checksum mismatch")
        pos += 12 + length
        if tag == b"IHDR":
            width, height, bit_depth, color_type, _, _, interlace = struct.unpack(
                ">IIBBBBB", payload
            )
            if interlace != 0:
                raise PngError("interlaced PNG not supported")
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    if width is None:
        raise PngError("missing IHDR")
    if color_type == 0 and bit_depth == 8:
        channels = 1
    elif color_type == 2 and bit_depth in (8, 16):
        channels = 3
    else:
        raise PngError(f"unsupported color type {color_type} / depth {bit_depth}")
    raw = _unfilter(zlib.decompress(bytes(idat)), height, width, channels, bit_depth // 8)
    if bit_depth == 16:
        arr = np.frombuffer(raw, dtype=">u2").astype(np.uint16)
    else:
        arr = np.frombuffer(raw, dtype=np.uint8).copy()
    if channels == 1:
        return arr.reshape(height, width)
    return arr.reshape(height, width, 3)
