"""Bijective mapping between occupied voxel vertices and feature-image pixels.

Construction: occupied vertices are sorted by 3D Morton code, split into
consecutive chunks of 64, and each chunk fills one 8x8 image block (blocks
enumerated row-major over the block grid) in 2D Morton order.  A partial
final chunk fills the lowest 2D Morton ranks of its block, so mapped pixels
stay contiguous along the block's Z-curve.

A "rowmajor" layout (vertices in C order, pixels in scanline order, no
blocks) is provided as the ablation baseline.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pngio
from .morton import morton2_encode_array, morton3_encode_array
from .occupancy import OccupancyGrid

VRFM_MAGIC = b"VRFM"
BLOCK = 8

EMPTY = -1  # sentinel in forward/inverse index arrays


class CapacityError(ValueError):
    """More occupied vertices than pixels in the image."""


@dataclass
class MappingTable:
    image_size: tuple[int, int]  # (W, H)
    grid_resolution: tuple[int, int, int]
    # flat C-order vertex index -> flat pixel index (v*W + u), EMPTY if unmapped
    forward_flat: np.ndarray = field(repr=False)
    # flat pixel index -> flat vertex index, EMPTY if pixel unused
    inverse_flat: np.ndarray = field(repr=False)
    layout: str = "morton"

    def __post_init__(self):
        self.occupied_pixels = int(np.count_nonzero(self.inverse_flat != EMPTY))

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]

    def vertex_to_pixel(self, x: int, y: int, z: int) -> tuple[int, int] | None:
        nx, ny, nz = self.grid_resolution
        if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
            raise ValueError(f"vertex ({x},{y},{z}) outside grid {self.grid_resolution}")
        p = self.forward_flat[(x * ny + y) * nz + z]
        if p == EMPTY:
            return None
        return int(p) % self.width, int(p) // self.width

    def pixel_to_vertex(self, u: int, v: int) -> tuple[int, int, int] | None:
        w, h = self.image_size
        if not (0 <= u < w and 0 <= v < h):
            raise ValueError(f"pixel ({u},{v}) outside image {self.image_size}")
        idx = self.inverse_flat[v * w + u]
        if idx == EMPTY:
            return None
        return self.vertex_coords(int(idx))

    def vertex_coords(self, flat_index: int) -> tuple[int, int, int]:
        _, ny, nz = self.grid_resolution
        return flat_index // (ny * nz), (flat_index // nz) % ny, flat_index % nz

    def mapped_pixels(self) -> np.ndarray:
        """Flat pixel indices that carry a vertex, in ascending order."""
        return np.nonzero(self.inverse_flat != EMPTY)[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, MappingTable)
            and self.image_size == other.image_size
            and self.grid_resolution == other.grid_resolution
            and np.array_equal(self.forward_flat, other.forward_flat)
            and np.array_equal(self.inverse_flat, other.inverse_flat)
        )


def _morton2_rank_offsets() -> tuple[np.ndarray, np.ndarray]:
    # rank k within an 8x8 block -> (du, dv); morton2 codes of 8x8 coords
    # are exactly 0..63, so rank == code
    ks = np.arange(BLOCK * BLOCK, dtype=np.uint64)
    du = np.zeros(BLOCK * BLOCK, dtype=np.int64)
    dv = np.zeros(BLOCK * BLOCK, dtype=np.int64)
    for u in range(BLOCK):
        for v in range(BLOCK):
            code = int(morton2_encode_array(np.array([u]), np.array([v]))[0])
            du[code], dv[code] = u, v
    assert np.array_equal(np.sort(np.arange(64)), ks.astype(np.int64))
    return du, dv


_DU, _DV = _morton2_rank_offsets()


def build_mapping(occ: OccupancyGrid, image_size: tuple[int, int], layout: str = "morton") -> MappingTable:
    """Assign every occupied vertex of the (union) grid a pixel."""
    w, h = image_size
    if w % BLOCK or h % BLOCK:
        raise ValueError(f"image size {image_size} must be a multiple of {BLOCK}")
    if layout not in ("morton", "rowmajor"):
        raise ValueError(f"unknown layout {layout!r}")
    nx, ny, nz = occ.resolution
    coords = np.argwhere(occ.bits)  # C-order ascending -> rowmajor order for free
    n = coords.shape[0]
    if n > w * h:
        raise CapacityError(f"{n} occupied vertices exceed {w}x{h}={w*h} pixels")

    if layout == "morton":
        codes = morton3_encode_array(coords[:, 0], coords[:, 1], coords[:, 2])
        order = np.argsort(codes, kind="stable")
        ranks = np.arange(n, dtype=np.int64)
        block_idx = ranks // (BLOCK * BLOCK)
        k = ranks % (BLOCK * BLOCK)
        blocks_per_row = w // BLOCK
        bu = (block_idx % blocks_per_row) * BLOCK + _DU[k]
        bv = (block_idx // blocks_per_row) * BLOCK + _DV[k]
        pixel_flat = bv * w + bu
        sorted_coords = coords[order]
    else:
        pixel_flat = np.arange(n, dtype=np.int64)
        sorted_coords = coords

    vert_flat = (sorted_coords[:, 0] * ny + sorted_coords[:, 1]) * nz + sorted_coords[:, 2]
    forward = np.full(nx * ny * nz, EMPTY, dtype=np.int64)
    inverse = np.full(w * h, EMPTY, dtype=np.int64)
    forward[vert_flat] = pixel_flat
    inverse[pixel_flat] = vert_flat
    return MappingTable((w, h), (nx, ny, nz), forward, inverse, layout)


# --- RGB-image serialization ------------------------------------------------

def _coords_image(table: MappingTable, bit_depth: int) -> np.ndarray:
    w, h = table.image_size
    sentinel = 255 if bit_depth == 8 else 65535
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    img = np.full((h, w, 3), sentinel, dtype=dtype)
    pix = table.mapped_pixels()
    verts = table.inverse_flat[pix]
    _, ny, nz = table.grid_resolution
    xs = verts // (ny * nz)
    ys = (verts // nz) % ny
    zs = verts % nz
    img[pix // w, pix % w] = np.stack([xs, ys, zs], axis=1).astype(dtype)
    return img


def _validity_mask(table: MappingTable) -> bytes:
    valid = (table.inverse_flat != EMPTY).astype(np.uint8)
    return np.packbits(valid, bitorder="little").tobytes()


def serialize_inverse_rgb(table: MappingTable, bit_depth: int | None = None) -> tuple[np.ndarray, bytes]:
    """Inverse map as an (H,W,3) coordinate image plus a validity bitmask.

    Coordinates are stored verbatim per channel; unused pixels carry the
    all-max sentinel but validity comes from the bitmask alone, since the
    sentinel coordinate itself may be a legal vertex.
    """
    max_coord = max(table.grid_resolution) - 1
    if bit_depth is None:
        bit_depth = 8 if max_coord <= 255 else 16
    if bit_depth == 8 and max_coord > 255:
        raise ValueError(f"grid coordinate {max_coord} exceeds 8-bit channels; use bit_depth=16")
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    return _coords_image(table, bit_depth), _validity_mask(table)


def deserialize_inverse_rgb(
    image: np.ndarray,
    mask: bytes,
    grid_resolution: tuple[int, int, int],
) -> MappingTable:
    h, w = image.shape[:2]
    nx, ny, nz = grid_resolution
    valid = np.unpackbits(
        np.frombuffer(mask, dtype=np.uint8), count=w * h, bitorder="little"
    ).astype(bool)
    pix = np.nonzero(valid)[0]
    coords = image.reshape(-1, 3)[pix].astype(np.int64)
    if coords.size and (coords.max(axis=0) >= np.array([nx, ny, nz])).any():
        raise ValueError("mapping image contains coordinates outside the grid")
    vert_flat = (coords[:, 0] * ny + coords[:, 1]) * nz + coords[:, 2]
    if np.unique(vert_flat).size != vert_flat.size:
        raise ValueError("mapping image maps one vertex to multiple pixels")
    forward = np.full(nx * ny * nz, EMPTY, dtype=np.int64)
    inverse = np.full(w * h, EMPTY, dtype=np.int64)
    forward[vert_flat] = pix
    inverse[pix] = vert_flat
    return MappingTable((w, h), grid_resolution, forward, inverse)


def save_mapping_png(table: MappingTable, png_path, mask_path=None) -> None:
    png_path = Path(png_path)
    if mask_path is None:
        mask_path = png_path.with_suffix(".mask")
    img, mask = serialize_inverse_rgb(table)
    pngio.write_png(png_path, img)
    with open(mask_path, "wb") as f:
        f.write(mask)


def load_mapping_png(png_path, grid_resolution, mask_path=None) -> MappingTable:
    png_path = Path(png_path)
    if mask_path is None:
        mask_path = png_path.with_suffix(".mask")
    img = pngio.read_png(png_path)
    with open(mask_path, "rb") as f:
        mask = f.read()
    return deserialize_inverse_rgb(img, mask, grid_resolution)


def save_mapping(table: MappingTable, path) -> None:
    """Binary container bundling the coordinate image and validity mask."""
    img, mask = serialize_inverse_rgb(table)
    depth = 8 if img.dtype == np.uint8 else 16
    w, h = table.image_size
    nx, ny, nz = table.grid_resolution
    with open(path, "wb") as f:
        f.write(VRFM_MAGIC)
        f.write(struct.pack("<HHIIIIIB3x", 1, depth, w, h, nx, ny, nz, 0))
        f.write(img.astype("<u2" if depth == 16 else np.uint8).tobytes())
        f.write(mask)


def load_mapping(path) -> MappingTable:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != VRFM_MAGIC:
        raise ValueError("bad mapping magic")
    _, depth, w, h, nx, ny, nz, _ = struct.unpack_from("<HHIIIIIB3x", buf, 4)
    offset = 4 + struct.calcsize("<HHIIIIIB3x")
    dtype = np.dtype("<u2") if depth == 16 else np.dtype(np.uint8)
    count = w * h * 3
    img = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    img = img.astype(np.uint16 if depth == 16 else np.uint8).reshape(h, w, 3)
    mask = buf[offset + count * dtype.itemsize :]
    return deserialize_inverse_rgb(img, mask, (nx, ny, nz))


def block_prefix_mask(image_size: tuple[int, int], occupied_pixels: int,
                      layout: str = "morton") -> bytes:
    """Reconstruct the validity bitmask from the mapped-pixel count alone.

    Mapped pixels always occupy the lowest fill ranks of the layout (the
    block-Z-curve for morton, scanline order for rowmajor), so the count
    fully determines which pixels are valid.
    """
    w, h = image_size
    if not (0 <= occupied_pixels <= w * h):
        raise ValueError(f"occupied_pixels {occupied_pixels} outside [0, {w * h}]")
    if layout == "rowmajor":
        ranks = np.arange(w * h, dtype=np.int64)
    elif layout == "morton":
        vv, uu = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        block = (vv // BLOCK) * (w // BLOCK) + (uu // BLOCK)
        inner = morton2_encode_array(uu % BLOCK, vv % BLOCK).astype(np.int64)
        ranks = (block * BLOCK * BLOCK + inner).reshape(-1)
    else:
        raise ValueError(f"unknown layout {layout!r}")
    valid = (ranks < occupied_pixels).astype(np.uint8)
    return np.packbits(valid, bitorder="little").tobytes()
