"""Deferred volumetric rendering.

Per ray: march the expanded volume on a fixed sample lattice (skipping
provably empty space via the occupancy pyramid), accumulate features with
transmittance weights, then decode the accumulated feature plus the
positionally-encoded view direction through one tiny MLP evaluation.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import FEATURE_DIM
from .feature_field import ExpandedVolume, FeatureImage, MappingTable, expand, sample_many
from .occupancy import OccupancyPyramid, cell_occupancy

ENC_FREQUENCIES = 4  # direction encoding bands -> 3 + 2*3*4 = 27 inputs
HIDDEN = 16
STEP_SCALE = 0.5  # default marching step, in voxel edges
BACKGROUND_WHITE = np.ones(3)


def enc_dim(freqs: int = ENC_FREQUENCIES) -> int:
    return 3 + 2 * 3 * freqs


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_from_camera: np.ndarray  # 4x4, camera axes: +x right, +y image-down, +z forward

    def __post_init__(self):
        self.world_from_camera = np.asarray(self.world_from_camera, dtype=np.float64)
        if self.world_from_camera.shape != (4, 4):
            raise ValueError("world_from_camera must be 4x4")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        r = self.world_from_camera[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise ValueError("rotation block is not orthonormal")

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0), fov_deg: float = 45.0,
                width: int = 256, height: int = 256) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(np.asarray(up, dtype=np.float64), fwd)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        m = np.eye(4)
        m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = right, down, fwd, eye
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height, m)

    def to_json(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "world_from_camera": [float(v) for v in self.world_from_camera.reshape(-1)],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Camera":
        m = np.asarray(d["world_from_camera"], dtype=np.float64).reshape(4, 4)
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]), m)


@dataclass
class RaySample:
    t: float
    delta: float
    sigma: float
    feature: np.ndarray


@dataclass
class TinyMLP:
    """One hidden layer of 16 ReLU units, sigmoid RGB output; shared per sequence."""

    w1: np.ndarray  # (HIDDEN, FEATURE_DIM + enc_dim)
    b1: np.ndarray  # (HIDDEN,)
    w2: np.ndarray  # (3, HIDDEN)
    b2: np.ndarray  # (3,)
    freqs: int = ENC_FREQUENCIES

    def __post_init__(self):
        expected = (HIDDEN, FEATURE_DIM + enc_dim(self.freqs))
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        if self.w1.shape != expected or self.b1.shape != (HIDDEN,):
            raise ValueError(f"hidden layer shapes {self.w1.shape}/{self.b1.shape} != {expected}")
        if self.w2.shape != (3, HIDDEN) or self.b2.shape != (3,):
            raise ValueError("output layer must be (3,16)/(3,)")
        for a in (self.w1, self.b1, self.w2, self.b2):
            if not np.isfinite(a).all():
                raise ValueError("non-finite MLP weights")

    @classmethod
    def seeded(cls, seed: int, freqs: int = ENC_FREQUENCIES) -> "TinyMLP":
        rng = np.random.default_rng(seed)
        n_in = FEATURE_DIM + enc_dim(freqs)
        return cls(
            rng.normal(0.0, 1.0 / np.sqrt(n_in), (HIDDEN, n_in)),
            rng.normal(0.0, 0.1, HIDDEN),
            rng.normal(0.0, 1.4 / np.sqrt(HIDDEN), (3, HIDDEN)),
            rng.normal(0.0, 0.1, 3),
            freqs,
        )

    def to_json(self) -> dict:
        return {
            "hidden": HIDDEN,
            "feature_dim": FEATURE_DIM,
            "enc_frequencies": self.freqs,
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "TinyMLP":
        return cls(
            np.asarray(d["w1"]), np.asarray(d["b1"]),
            np.asarray(d["w2"]), np.asarray(d["b2"]),
            int(d.get("enc_frequencies", ENC_FREQUENCIES)),
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def load(cls, path) -> "TinyMLP":
        with open(path) as f:
            return cls.from_json(json.load(f))


def positional_encode(d, freqs: int = ENC_FREQUENCIES) -> np.ndarray:
    """(d, sin(2^0 pi d), cos(2^0 pi d), ..., sin(2^{F-1} pi d), cos(...))."""
    d = np.asarray(d, dtype=np.float64)
    norm = np.linalg.norm(d)
    if abs(norm - 1.0) > 1e-6:
        warnings.warn(f"direction norm {norm:.6g} != 1; normalizing", stacklevel=2)
        d = d / norm
    return positional_encode_batch(d[None, :], freqs)[0]


def positional_encode_batch(dirs: np.ndarray, freqs: int = ENC_FREQUENCIES) -> np.ndarray:
    parts = [dirs]
    for i in range(freqs):
        scaled = (2.0**i) * np.pi * dirs
        parts.append(np.sin(scaled))
        parts.append(np.cos(scaled))
    return np.concatenate(parts, axis=-1)


def accumulate(samples: list[RaySample]) -> tuple[np.ndarray, float]:
    """Transmittance-weighted feature sum along one ray, plus total opacity."""
    feat = np.zeros(FEATURE_DIM, dtype=np.float64)
    log_t = 0.0  # running log-transmittance
    opacity = 0.0
    prev_t = -np.inf
    for s in samples:
        if s.delta <= 0:
            raise ValueError("sample interval must be positive")
        if s.t <= prev_t:
            raise ValueError("samples must be strictly increasing in t")
        prev_t = s.t
        alpha = -np.expm1(-s.sigma * s.delta)
        w = np.exp(log_t) * alpha
        feat += w * np.asarray(s.feature, dtype=np.float64)
        opacity += w
        log_t -= s.sigma * s.delta
    return feat, opacity


def accumulate_batch(sigma, delta, feats, ray_ptr) -> tuple[np.ndarray, np.ndarray]:
    """accumulate() over many rays stored flat; ray_ptr gives CSR segments."""
    sd = np.asarray(sigma, dtype=np.float64) * np.asarray(delta, dtype=np.float64)
    cs = np.cumsum(sd)
    starts = ray_ptr[:-1]
    seg_base = np.repeat(np.concatenate([[0.0], cs])[starts], np.diff(ray_ptr))
    log_t = -(np.concatenate([[0.0], cs])[:-1] - seg_base)  # exclusive prefix per segment
    alpha = -np.expm1(-sd)
    w = np.exp(log_t) * alpha
    nrays = len(ray_ptr) - 1
    feat = np.zeros((nrays, feats.shape[1]), dtype=np.float64)
    opacity = np.zeros(nrays, dtype=np.float64)
    if len(sd):
        np.add.reduceat(w[:, None] * feats, starts.clip(max=len(sd) - 1), axis=0, out=feat)
        opacity = np.add.reduceat(w, starts.clip(max=len(sd) - 1))
        empty = np.diff(ray_ptr) == 0
        feat[empty] = 0.0
        opacity[empty] = 0.0
    return feat, opacity


def decode(mlp: TinyMLP, feat, enc) -> np.ndarray:
    """One MLP evaluation: accumulated feature + encoded direction -> RGB."""
    return decode_batch(mlp, np.asarray(feat)[None, :], np.asarray(enc)[None, :])[0]


def decode_batch(mlp: TinyMLP, feats: np.ndarray, encs: np.ndarray) -> np.ndarray:
    if feats.shape[-1] != FEATURE_DIM or encs.shape[-1] != enc_dim(mlp.freqs):
        raise ValueError(f"bad decode input shapes {feats.shape} / {encs.shape}")
    x = np.concatenate([feats, encs], axis=-1)
    hidden = np.maximum(x @ mlp.w1.T + mlp.b1, 0.0)
    out = hidden @ mlp.w2.T + mlp.b2
    return 1.0 / (1.0 + np.exp(-out))


# --- marching ----------------------------------------------------------------

def ray_box_range(origin: np.ndarray, direction: np.ndarray) -> tuple[float, float]:
    """Parametric overlap of the ray with the unit cube ([t0, t1], t0 >= 0)."""
    t0, t1 = 0.0, np.inf
    for a in range(3):
        if abs(direction[a]) < 1e-15:
            if not (0.0 <= origin[a] <= 1.0):
                return 0.0, -1.0
            continue
        lo = (0.0 - origin[a]) / direction[a]
        hi = (1.0 - origin[a]) / direction[a]
        if lo > hi:
            lo, hi = hi, lo
        t0, t1 = max(t0, lo), min(t1, hi)
    return t0, t1


def _pyramid_empty_level(pyr: OccupancyPyramid, cell: tuple[int, int, int]) -> int:
    """Coarsest level whose covering vertices are all empty, or -1."""
    i, j, k = cell
    for lvl in range(len(pyr.levels) - 1, -1, -1):
        bits = pyr.levels[lvl].bits
        lo = (i >> lvl, j >> lvl, k >> lvl)
        hi = ((i + 1) >> lvl, (j + 1) >> lvl, (k + 1) >> lvl)
        region = bits[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1]
        if not region.any():
            return lvl
    return -1


def march_ray(vol: ExpandedVolume, pyr: OccupancyPyramid | None, ray, step: float,
              skip: bool = True) -> list[RaySample]:
    """Fixed-lattice samples along the ray, skipping provably empty steps.

    Skipping advances the sample index past an empty coarse cell but never
    moves samples off the lattice, so skip on/off yields identical
    nonzero-density sample sets.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    origin, direction = (np.asarray(v, dtype=np.float64) for v in ray)
    direction = direction / np.linalg.norm(direction)
    t0, t1 = ray_box_range(origin, direction)
    if t1 <= t0:
        return []
    n = np.array(vol.resolution)
    samples: list[RaySample] = []
    total = t1 - t0
    count = int(np.ceil(total / step - 1e-12))
    k = 0
    while k < count:
        seg_start = t0 + k * step
        seg_end = min(seg_start + step, t1)
        delta = seg_end - seg_start
        if delta <= 1e-12:
            break
        t_mid = 0.5 * (seg_start + seg_end)
        p = origin + t_mid * direction
        cell = tuple(np.clip((p * (n - 1)).astype(np.int64), 0, n - 2))
        if skip and pyr is not None:
            lvl = _pyramid_empty_level(pyr, cell)
            if lvl >= 0:
                # jump past the empty region; every midpoint inside it is
                # provably zero, the first one at/after the exit is re-tested
                span = 1 << lvl
                lo = np.array([((c >> lvl) << lvl) for c in cell], dtype=np.float64)
                hi = np.array(
                    [min((((c + 1) >> lvl) + 1) * span - 1, nn - 1) for c, nn in zip(cell, n)],
                    dtype=np.float64,
                )
                box_lo, box_hi = lo / (n - 1), hi / (n - 1)
                t_exit = np.inf
                for a in range(3):
                    if direction[a] > 1e-15:
                        t_exit = min(t_exit, (box_hi[a] - origin[a]) / direction[a])
                    elif direction[a] < -1e-15:
                        t_exit = min(t_exit, (box_lo[a] - origin[a]) / direction[a])
                k_next = int(np.ceil((t_exit - t0) / step - 0.5 - 1e-12))
                k = max(k + 1, k_next)
                continue
        dens, feat = sample_many(vol, p[None, :])
        samples.append(RaySample(t_mid, delta, float(dens[0]), feat[0]))
        k += 1
    return samples


# --- whole-image rendering ---------------------------------------------------

def generate_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel world origins and unit directions, pixel centers, row-major."""
    u = (np.arange(camera.width) + 0.5 - camera.cx) / camera.fx
    v = (np.arange(camera.height) + 0.5 - camera.cy) / camera.fy
    uu, vv = np.meshgrid(u, v)
    dirs_cam = np.stack([uu, vv, np.ones_like(uu)], axis=-1).reshape(-1, 3)
    r = camera.world_from_camera[:3, :3]
    t = camera.world_from_camera[:3, 3]
    dirs = dirs_cam @ r.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(t, dirs.shape).copy()
    return origins, dirs


def ray_box_range_batch(origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        lo = (0.0 - origins) * inv
        hi = (1.0 - origins) * inv
    tmin = np.nanmax(np.minimum(lo, hi), axis=1)
    tmax = np.nanmin(np.maximum(lo, hi), axis=1)
    tmin = np.maximum(tmin, 0.0)
    par = np.abs(dirs) < 1e-15
    outside = par & ((origins < 0.0) | (origins > 1.0))
    tmax = np.where(outside.any(axis=1), -1.0, tmax)
    return tmin, tmax


def _lattice(tmin, tmax, step):
    """Midpoints/deltas of the fixed lattice, padded to the max count."""
    total = np.maximum(tmax - tmin, 0.0)
    counts = np.ceil(total / step - 1e-12).astype(np.int64)
    kmax = int(counts.max(initial=0))
    ks = np.arange(kmax)
    seg_start = tmin[:, None] + ks[None, :] * step
    seg_end = np.minimum(seg_start + step, tmax[:, None])
    delta = np.maximum(seg_end - seg_start, 0.0)
    valid = ks[None, :] < counts[:, None]
    delta = np.where(valid, delta, 0.0)
    mid = 0.5 * (seg_start + seg_end)
    return mid, delta, valid


def render_volume(
    vol: ExpandedVolume,
    mlp: TinyMLP,
    camera: Camera,
    step: float | None = None,
    cell_mask: np.ndarray | None = None,
    background: str = "none",
    chunk: int = 2048,
    return_opacity: bool = False,
):
    """Render an expanded volume; cell_mask enables exact empty-space skipping."""
    n = np.array(vol.resolution)
    if step is None:
        step = STEP_SCALE / (n.min() - 1)
    origins, dirs = generate_rays(camera)
    out = np.zeros((camera.height * camera.width, 3), dtype=np.float64)
    opac_out = np.zeros(camera.height * camera.width, dtype=np.float64)
    flat = vol.packed.reshape(-1, vol.packed.shape[-1]).astype(np.float64)
    nx, ny, nz = vol.resolution
    for lo in range(0, len(origins), chunk):
        o = origins[lo : lo + chunk]
        d = dirs[lo : lo + chunk]
        tmin, tmax = ray_box_range_batch(o, d)
        mid, delta, valid = _lattice(tmin, tmax, step)
        r, kmax = mid.shape
        if kmax == 0:
            feats = np.zeros((r, FEATURE_DIM))
            opac = np.zeros(r)
        else:
            pts = o[:, None, :] + mid[..., None] * d[:, None, :]
            g = np.clip(pts, 0.0, 1.0) * (n - 1)
            cells = np.minimum(g.astype(np.int64), n - 2)
            cells = np.maximum(cells, 0)
            keep = valid.copy()
            if cell_mask is not None:
                keep &= cell_mask[cells[..., 0], cells[..., 1], cells[..., 2]]
            sigma = np.zeros((r, kmax))
            feat_s = np.zeros((r, kmax, FEATURE_DIM))
            idx = np.nonzero(keep)
            if len(idx[0]):
                gi = g[idx]
                i0 = cells[idx]
                frac = gi - i0
                base = (i0[:, 0] * ny + i0[:, 1]) * nz + i0[:, 2]
                acc = np.zeros((len(base), 1 + FEATURE_DIM))
                for dx in (0, 1):
                    wx = frac[:, 0] if dx else 1 - frac[:, 0]
                    for dy in (0, 1):
                        wy = frac[:, 1] if dy else 1 - frac[:, 1]
                        for dz in (0, 1):
                            wz = frac[:, 2] if dz else 1 - frac[:, 2]
                            acc += (wx * wy * wz)[:, None] * flat[base + (dx * ny + dy) * nz + dz]
                sigma[idx] = acc[:, 0]
                feat_s[idx] = acc[:, 1:]
            sd = sigma * delta
            log_t = np.concatenate(
                [np.zeros((r, 1)), -np.cumsum(sd, axis=1)[:, :-1]], axis=1
            )
            w = np.exp(log_t) * (-np.expm1(-sd))
            feats = (w[..., None] * feat_s).sum(axis=1)
            opac = w.sum(axis=1)
        enc = positional_encode_batch(d, mlp.freqs)
        rgb = decode_batch(mlp, feats, enc)
        if background == "white":
            rgb = opac[:, None] * rgb + (1.0 - opac[:, None]) * BACKGROUND_WHITE
        elif background != "none":
            raise ValueError(f"unknown background mode {background!r}")
        out[lo : lo + chunk] = rgb
        opac_out[lo : lo + chunk] = opac
    img = out.reshape(camera.height, camera.width, 3).astype(np.float32)
    if return_opacity:
        return img, opac_out.reshape(camera.height, camera.width).astype(np.float32)
    return img


def render(
    images: dict[int, FeatureImage],
    table: MappingTable,
    mlp: TinyMLP,
    camera: Camera,
    frame: int,
    pyramid: OccupancyPyramid | None = None,
    step: float | None = None,
    background: str = "none",
) -> np.ndarray:
    """Render one frame of a loaded group from its feature image."""
    if frame not in images:
        raise KeyError(f"frame {frame} not in loaded group (frames {sorted(images)})")
    vol = expand(images[frame], table)
    mask = cell_occupancy(pyramid.levels[0]) if pyramid is not None else None
    return render_volume(vol, mlp, camera, step=step, cell_mask=mask, background=background)


def render_oracle(
    vol: ExpandedVolume,
    mlp: TinyMLP,
    camera: Camera,
    step: float | None = None,
    background: str = "none",
) -> np.ndarray:
    """Brute-force reference: no skipping, half the step size."""
    n = min(vol.resolution)
    if step is None:
        step = STEP_SCALE / (n - 1)
    return render_volume(vol, mlp, camera, step=step / 2, cell_mask=None, background=background)
