"""3D and 2D Morton (Z-order) codes.

Interleaving convention: x occupies the least significant bit of each
triple (3D) / pair (2D), so bit i of x lands on output bit 3*i and bit i
of u lands on output bit 2*i.  Any consistent convention preserves
locality; this one is fixed for reproducibility.
"""

from __future__ import annotations

import numpy as np

MAX_COORD_3D = 1 << 21  # 3 * 21 = 63 bits
MAX_COORD_2D = 1 << 32


def _spread3(v: np.ndarray) -> np.ndarray:
    # magic-number bit spreading, 21 input bits -> every 3rd bit of 63
    v = v & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def _compact3(v: np.ndarray) -> np.ndarray:
    v = v & np.uint64(0x1249249249249249)
    v = (v ^ (v >> np.uint64(2))) & np.uint64(0x10C30C30C30C30C3)
    v = (v ^ (v >> np.uint64(4))) & np.uint64(0x100F00F00F00F00F)
    v = (v ^ (v >> np.uint64(8))) & np.uint64(0x1F0000FF0000FF)
    v = (v ^ (v >> np.uint64(16))) & np.uint64(0x1F00000000FFFF)
    v = (v ^ (v >> np.uint64(32))) & np.uint64(0x1FFFFF)
    return v


def _spread2(v: np.ndarray) -> np.ndarray:
    v = v & np.uint64(0xFFFFFFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x0000FFFF0000FFFF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x00FF00FF00FF00FF)
    v = (v | (v << np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    v = (v | (v << np.uint64(2))) & np.uint64(0x3333333333333333)
    v = (v | (v << np.uint64(1))) & np.uint64(0x5555555555555555)
    return v


def _compact2(v: np.ndarray) -> np.ndarray:
    v = v & np.uint64(0x5555555555555555)
    v = (v ^ (v >> np.uint64(1))) & np.uint64(0x3333333333333333)
    v = (v ^ (v >> np.uint64(2))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    v = (v ^ (v >> np.uint64(4))) & np.uint64(0x00FF00FF00FF00FF)
    v = (v ^ (v >> np.uint64(8))) & np.uint64(0x0000FFFF0000FFFF)
    v = (v ^ (v >> np.uint64(16))) & np.uint64(0xFFFFFFFF)
    return v


def morton3_encode(x: int, y: int, z: int) -> int:
    """Interleave three coordinates into one Z-order code (x least significant)."""
    for name, c in (("x", x), ("y", y), ("z", z)):
        if not 0 <= c < MAX_COORD_3D:
            raise ValueError(f"coordinate {name}={c} outside [0, 2^21)")
    xs, ys, zs = (np.uint64(x), np.uint64(y), np.uint64(z))
    code = _spread3(xs) | (_spread3(ys) << np.uint64(1)) | (_spread3(zs) << np.uint64(2))
    return int(code)


def morton3_decode(code: int) -> tuple[int, int, int]:
    c = np.uint64(code)
    return (
        int(_compact3(c)),
        int(_compact3(c >> np.uint64(1))),
        int(_compact3(c >> np.uint64(2))),
    )


def morton2_encode(u: int, v: int) -> int:
    """Interleave two coordinates into one Z-order code (u least significant)."""
    for name, c in (("u", u), ("v", v)):
        if not 0 <= c < MAX_COORD_2D:
            raise ValueError(f"coordinate {name}={c} outside [0, 2^32)")
    code = _spread2(np.uint64(u)) | (_spread2(np.uint64(v)) << np.uint64(1))
    return int(code)


def morton2_decode(code: int) -> tuple[int, int]:
    c = np.uint64(code)
    return int(_compact2(c)), int(_compact2(c >> np.uint64(1)))


def morton3_encode_array(x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Vectorized morton3_encode over integer arrays; returns uint64 codes."""
    for name, c in (("x", x), ("y", y), ("z", z)):
        if c.size and (c.min() < 0 or c.max() >= MAX_COORD_3D):
            raise ValueError(f"coordinate array {name} outside [0, 2^21)")
    xs = _spread3(x.astype(np.uint64))
    ys = _spread3(y.astype(np.uint64))
    zs = _spread3(z.astype(np.uint64))
    return xs | (ys << np.uint64(1)) | (zs << np.uint64(2))


def morton2_encode_array(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized morton2_encode over integer arrays; returns uint64 codes."""
    us = _spread2(u.astype(np.uint64))
    vs = _spread2(v.astype(np.uint64))
    return us | (vs << np.uint64(1))
