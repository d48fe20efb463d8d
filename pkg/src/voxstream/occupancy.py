"""Binary occupancy grids, adaptive frame grouping, and the skip pyramid.

Occupancy is tracked on voxel *vertices* (the entities the mapping table
assigns pixels to), laid out as bool arrays indexed [ix, iy, iz].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

VRFO_MAGIC = b"VRFO"


class GroupOverflowError(ValueError):
    """A single frame's occupancy alone exceeds the pixel budget."""


@dataclass
class OccupancyGrid:
    bits: np.ndarray  # bool, shape (Nx, Ny, Nz)
    occupied_count: int = field(init=False)

    def __post_init__(self):
        self.bits = np.ascontiguousarray(self.bits, dtype=bool)
        if self.bits.ndim != 3:
            raise ValueError(f"occupancy must be 3D, got shape {self.bits.shape}")
        self.occupied_count = int(np.count_nonzero(self.bits))

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.bits.shape

    def __eq__(self, other) -> bool:
        return isinstance(other, OccupancyGrid) and np.array_equal(self.bits, other.bits)


@dataclass
class OccupancyPyramid:
    """Level 0 is full resolution; each level halves every axis (ceil)."""

    levels: list[OccupancyGrid]

    def __post_init__(self):
        if len(self.levels) < 2:
            raise ValueError("pyramid needs at least 2 levels")


@dataclass
class GroupPlan:
    # (start_frame, end_frame inclusive, union occupancy)
    groups: list[tuple[int, int, OccupancyGrid]]

    @property
    def frame_count(self) -> int:
        return self.groups[-1][1] + 1 if self.groups else 0

    def group_of_frame(self, t: int) -> int:
        for gid, (s, e, _) in enumerate(self.groups):
            if s <= t <= e:
                return gid
        raise ValueError(f"frame {t} not covered by plan")


def threshold_occupancy(vol, gamma: float) -> OccupancyGrid:
    """Mark every vertex whose density strictly exceeds gamma."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    values = np.asarray(getattr(vol, "values", vol))
    return OccupancyGrid(values > gamma)


def union(grids: list[OccupancyGrid]) -> OccupancyGrid:
    if not grids:
        raise ValueError("union of no grids")
    res = grids[0].resolution
    acc = np.zeros(res, dtype=bool)
    for g in grids:
        if g.resolution != res:
            raise ValueError(f"resolution mismatch: {g.resolution} vs {res}")
        acc |= g.bits
    return OccupancyGrid(acc)


def plan_groups(grids: list[OccupancyGrid], theta: int) -> GroupPlan:
    """Greedy left-to-right grouping: each group is the maximal prefix whose
    running union stays within the pixel budget theta."""
    if theta < 1:
        raise ValueError("theta must be >= 1")
    if not grids:
        raise ValueError("no frames to plan")
    groups = []
    start = 0
    running = np.zeros(grids[0].resolution, dtype=bool)
    for t, g in enumerate(grids):
        if g.resolution != grids[0].resolution:
            raise ValueError(f"resolution mismatch at frame {t}")
        if g.occupied_count > theta:
            raise GroupOverflowError(
                f"frame {t} occupies {g.occupied_count} vertices alone, over the "
                f"budget {theta}; raise theta or lower the grid resolution"
            )
        candidate = running | g.bits
        if t > start and int(np.count_nonzero(candidate)) > theta:
            groups.append((start, t - 1, OccupancyGrid(running)))
            start = t
            running = g.bits.copy()
        else:
            running = candidate
    groups.append((start, len(grids) - 1, OccupancyGrid(running)))
    return GroupPlan(groups)


def _max_pool2(bits: np.ndarray) -> np.ndarray:
    """2x max-pool per axis with ceiling division (implicit empty padding)."""
    nx, ny, nz = bits.shape
    px, py, pz = (-nx) % 2, (-ny) % 2, (-nz) % 2
    padded = np.pad(bits, ((0, px), (0, py), (0, pz)), constant_values=False)
    m, n, p = padded.shape
    view = padded.reshape(m // 2, 2, n // 2, 2, p // 2, 2)
    return view.any(axis=(1, 3, 5))


def build_pyramid(grid: OccupancyGrid, min_axis_stop: int = 8) -> OccupancyPyramid:
    """Max-pool by 2x per level; stop once the next level's min axis would be
    <= min_axis_stop (but always produce at least one pooled level)."""
    if min(grid.resolution) < 2:
        raise ValueError("grid too small to pool")
    levels = [grid]
    while len(levels) == 1 or -(-min(levels[-1].resolution) // 2) > min_axis_stop:
        levels.append(OccupancyGrid(_max_pool2(levels[-1].bits)))
    return OccupancyPyramid(levels)


def cell_occupancy(grid: OccupancyGrid) -> np.ndarray:
    """Per-cell OR of the 8 corner vertices, shape (Nx-1, Ny-1, Nz-1).

    A trilinear field that is zero at unmarked vertices is exactly zero at
    any point whose cell is unmarked here; this is the exact skip test.
    """
    b = grid.bits
    return (
        b[:-1, :-1, :-1] | b[1:, :-1, :-1] | b[:-1, 1:, :-1] | b[1:, 1:, :-1]
        | b[:-1, :-1, 1:] | b[1:, :-1, 1:] | b[:-1, 1:, 1:] | b[1:, 1:, 1:]
    )


# --- serialization ---------------------------------------------------------

def _pack_grid(grid: OccupancyGrid) -> bytes:
    nx, ny, nz = grid.resolution
    header = VRFO_MAGIC + struct.pack("<III", nx, ny, nz)
    return header + np.packbits(grid.bits.reshape(-1), bitorder="little").tobytes()


def _unpack_grid(buf: bytes, offset: int = 0) -> tuple[OccupancyGrid, int]:
    if buf[offset : offset + 4] != VRFO_MAGIC:
        raise ValueError("bad occupancy magic")
    nx, ny, nz = struct.unpack_from("<III", buf, offset + 4)
    nbits = nx * ny * nz
    nbytes = (nbits + 7) // 8
    start = offset + 16
    raw = np.frombuffer(buf, dtype=np.uint8, count=nbytes, offset=start)
    bits = np.unpackbits(raw, count=nbits, bitorder="little").astype(bool)
    return OccupancyGrid(bits.reshape(nx, ny, nz)), start + nbytes


def save_grid(path, grid: OccupancyGrid) -> None:
    with open(path, "wb") as f:
        f.write(_pack_grid(grid))


def load_grid(path) -> OccupancyGrid:
    with open(path, "rb") as f:
        grid, _ = _unpack_grid(f.read())
    return grid


def pyramid_to_bytes(pyr: OccupancyPyramid) -> bytes:
    out = struct.pack("<I", len(pyr.levels))
    for lvl in pyr.levels:
        out += _pack_grid(lvl)
    return out


def pyramid_from_bytes(buf: bytes) -> OccupancyPyramid:
    (count,) = struct.unpack_from("<I", buf, 0)
    levels = []
    offset = 4
    for _ in range(count):
        grid, offset = _unpack_grid(buf, offset)
        levels.append(grid)
    return OccupancyPyramid(levels)


def save_pyramid(path, pyr: OccupancyPyramid) -> None:
    with open(path, "wb") as f:
        f.write(pyramid_to_bytes(pyr))


def load_pyramid(path) -> OccupancyPyramid:
    with open(path, "rb") as f:
        return pyramid_from_bytes(f.read())


def export_png_slices(grid: OccupancyGrid, directory, prefix: str = "occ") -> list[str]:
    """Write one monochrome PNG per z-slice (255 = occupied)."""
    from pathlib import Path

    from . import pngio

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for iz in range(grid.resolution[2]):
        img = (grid.bits[:, :, iz].T.astype(np.uint8)) * 255  # rows = y
        p = directory / f"{prefix}_{iz:04d}.png"
        pngio.write_png(p, img)
        paths.append(str(p))
    return paths
