"""Per-frame feature images and their expansion back into 3D volumes.

Channel 0 of a feature image stores a raw density logit; rendering applies
a shifted softplus so a stored zero decodes to a density of ~4.5e-5, far
below the occupancy threshold.  Channels 1..h are the appearance feature.
Unmapped vertices expand to exact zeros, which makes empty-space skipping
exact rather than approximate.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import FEATURE_DIM
from .mapping import EMPTY, MappingTable

VRFI_MAGIC = b"VRFI"

DENSITY_SHIFT = -10.0


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    # inverse of log(1+e^x); stable for large y
    y = np.asarray(y, dtype=np.float64)
    return np.where(y > 30.0, y, np.log(np.expm1(np.maximum(y, 1e-300))))


def activate_density(raw):
    """Stored logit -> nonnegative density."""
    return softplus(np.asarray(raw) + DENSITY_SHIFT)


def density_to_raw(density, floor: float = 1e-6):
    """Inverse of activate_density, with a floor for empty vertices."""
    d = np.maximum(np.asarray(density, dtype=np.float64), floor)
    return softplus_inv(d) - DENSITY_SHIFT


@dataclass
class FeatureImage:
    values: np.ndarray  # float32, shape (H, W, 1 + FEATURE_DIM)
    frame_index: int = 0
    group_id: int = 0

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 3 or self.values.shape[2] != 1 + FEATURE_DIM:
            raise ValueError(
                f"feature image must be (H, W, {1 + FEATURE_DIM}), got {self.values.shape}"
            )
        if not np.isfinite(self.values).all():
            raise ValueError("feature image contains non-finite values")

    @property
    def size(self) -> tuple[int, int]:
        h, w, _ = self.values.shape
        return (w, h)

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass
class ExpandedVolume:
    """Feature image scattered back onto the voxel grid.

    `packed[..., 0]` is the activated density, `packed[..., 1:]` the
    feature; `raw` keeps the unactivated image values for lossless
    round-trip checks and training.
    """

    resolution: tuple[int, int, int]
    packed: np.ndarray = field(repr=False)  # (Nx, Ny, Nz, 1 + h) float32
    raw: np.ndarray = field(repr=False)  # same shape, channel 0 unactivated

    @property
    def density(self) -> np.ndarray:
        return self.packed[..., 0]

    @property
    def features(self) -> np.ndarray:
        return self.packed[..., 1:]


class OpCounter:
    """Counts elementary lookups so tests can assert O(1) access cost."""

    def __init__(self):
        self.ops = 0


def fetch(img: FeatureImage, table: MappingTable, x: tuple[int, int, int], counter: OpCounter | None = None):
    """Density and feature of one voxel vertex; zeros when unmapped."""
    nx, ny, nz = table.grid_resolution
    ix, iy, iz = x
    if not (0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz):
        raise ValueError(f"vertex {x} outside grid {table.grid_resolution}")
    pix = table.forward_flat[(ix * ny + iy) * nz + iz]
    if counter is not None:
        counter.ops += 2  # one table lookup + one pixel read, always
    if pix == EMPTY:
        return 0.0, np.zeros(FEATURE_DIM, dtype=np.float32)
    w = table.width
    px = img.values[pix // w, pix % w]
    return float(activate_density(px[0])), px[1:].copy()


def expand(img: FeatureImage, table: MappingTable, workers: int = 1) -> ExpandedVolume:
    """Scatter every mapped pixel to its vertex.

    The mapping is a bijection, so worker shards write disjoint vertices and
    the result is identical for any worker count.
    """
    if img.size != table.image_size:
        raise ValueError(f"image size {img.size} != mapping size {table.image_size}")
    nx, ny, nz = table.grid_resolution
    c = img.channels
    raw = np.zeros((nx * ny * nz, c), dtype=np.float32)
    pix = table.mapped_pixels()
    verts = table.inverse_flat[pix]
    flat_img = img.values.reshape(-1, c)

    if workers <= 1 or len(pix) == 0:
        raw[verts] = flat_img[pix]
    else:
        shards = np.array_split(np.arange(len(pix)), workers)

        def scatter(idx):
            raw[verts[idx]] = flat_img[pix[idx]]

        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(scatter, [s for s in shards if s.size]))

    raw = raw.reshape(nx, ny, nz, c)
    packed = raw.copy()
    mapped = np.zeros(nx * ny * nz, dtype=bool)
    mapped[verts] = True
    act = activate_density(raw[..., 0]).astype(np.float32)
    packed[..., 0] = np.where(mapped.reshape(nx, ny, nz), act, 0.0)
    return ExpandedVolume((nx, ny, nz), packed, raw)


def sample(vol: ExpandedVolume, p) -> tuple[float, np.ndarray]:
    """Trilinear density/feature at one continuous point in [0,1]^3."""
    d, f = sample_many(vol, np.asarray(p, dtype=np.float64)[None, :])
    return float(d[0]), f[0]


def sample_many(vol: ExpandedVolume, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized trilinear interpolation; points outside [0,1]^3 give zeros."""
    nx, ny, nz = vol.resolution
    pts = np.asarray(pts, dtype=np.float64)
    inside = ((pts >= 0.0) & (pts <= 1.0)).all(axis=1)
    g = np.clip(pts, 0.0, 1.0) * (np.array([nx, ny, nz]) - 1)
    i0 = np.minimum(g.astype(np.int64), np.array([nx, ny, nz]) - 2)
    i0 = np.maximum(i0, 0)
    f = g - i0
    out = np.zeros((len(pts), vol.packed.shape[-1]), dtype=np.float64)
    flat = vol.packed.reshape(-1, vol.packed.shape[-1])
    base = (i0[:, 0] * ny + i0[:, 1]) * nz + i0[:, 2]
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (
                    (f[:, 0] if dx else 1 - f[:, 0])
                    * (f[:, 1] if dy else 1 - f[:, 1])
                    * (f[:, 2] if dz else 1 - f[:, 2])
                )
                idx = base + (dx * ny + dy) * nz + dz
                out += w[:, None] * flat[idx]
    out[~inside] = 0.0
    return out[:, 0], out[:, 1:]


def bake(density_values: np.ndarray, feature_values: np.ndarray, table: MappingTable,
         frame_index: int = 0, group_id: int = 0) -> FeatureImage:
    """Scatter ground-truth volumes into a feature image via the forward map."""
    nx, ny, nz = table.grid_resolution
    if density_values.shape != (nx, ny, nz):
        raise ValueError(f"density shape {density_values.shape} != grid {table.grid_resolution}")
    if feature_values.shape != (nx, ny, nz, FEATURE_DIM):
        raise ValueError(f"feature shape {feature_values.shape} incompatible with grid")
    w, h = table.image_size
    img = np.zeros((h, w, 1 + FEATURE_DIM), dtype=np.float32)
    pix = table.mapped_pixels()
    verts = table.inverse_flat[pix]
    img.reshape(-1, 1 + FEATURE_DIM)[pix, 0] = density_to_raw(
        density_values.reshape(-1)[verts]
    ).astype(np.float32)
    img.reshape(-1, 1 + FEATURE_DIM)[pix, 1:] = feature_values.reshape(-1, FEATURE_DIM)[verts]
    return FeatureImage(img, frame_index, group_id)


# --- raw float container ----------------------------------------------------

def save_image(path, img: FeatureImage) -> None:
    h, w, c = img.values.shape
    with open(path, "wb") as f:
        f.write(VRFI_MAGIC)
        f.write(struct.pack("<HHIIii", 1, c, w, h, img.frame_index, img.group_id))
        f.write(img.values.astype("<f4").tobytes())


def load_image(path) -> FeatureImage:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != VRFI_MAGIC:
        raise ValueError("bad feature-image magic")
    _, c, w, h, frame_index, group_id = struct.unpack_from("<HHIIii", buf, 4)
    offset = 4 + struct.calcsize("<HHIIii")
    values = np.frombuffer(buf, dtype="<f4", count=w * h * c, offset=offset)
    return FeatureImage(values.reshape(h, w, c).copy(), frame_index, group_id)


def relayout(img: FeatureImage, src: MappingTable, dst: MappingTable) -> FeatureImage:
    """Move pixel content between two mappings of the same occupancy set.

    Unmapped pixels are zeroed in the output, so byte comparisons between
    layouts measure arrangement, not leftover content.
    """
    if src.grid_resolution != dst.grid_resolution:
        raise ValueError("mappings cover different grids")
    src_mapped = src.forward_flat >= 0
    if not np.array_equal(src_mapped, dst.forward_flat >= 0):
        raise ValueError("mappings cover different vertex sets")
    w, h = dst.image_size
    c = img.values.shape[-1]
    out = np.zeros((h, w, c), dtype=img.values.dtype)
    sp = src.forward_flat[src_mapped]
    dp = dst.forward_flat[src_mapped]
    out.reshape(-1, c)[dp] = img.values.reshape(-1, c)[sp]
    return FeatureImage(out, img.frame_index, img.group_id)
