"""Synthetic dynamic scenes with analytic density and feature fields.

A scene is a union of signed-distance primitives moving on simple paths
inside the unit cube, plus a seeded affine-sigmoid feature rule.  Scenes
provide lattice volumes for baking and a reference renderer (shared tiny
MLP, white background) that supplies ground-truth images for fitting.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import FEATURE_DIM
from .renderer import (
    Camera,
    STEP_SCALE,
    TinyMLP,
    _lattice,
    decode_batch,
    generate_rays,
    positional_encode_batch,
    ray_box_range_batch,
)

VRFV_MAGIC = b"VRFV"
DENSITY_SCALE = 50.0
_TWO_PI = 2.0 * np.pi


@dataclass
class Primitive:
    kind: str  # sphere | box | torus
    center: tuple[float, float, float] = (0.5, 0.5, 0.5)
    radius: float = 0.12  # sphere radius; torus tube radius
    half_extents: tuple[float, float, float] = (0.1, 0.1, 0.1)
    major_radius: float = 0.18  # torus ring radius, in the xz-plane
    path: str = "static"  # static | linear | orbit
    end_center: tuple[float, float, float] | None = None  # linear target
    orbit_radius: float = 0.15
    phase_offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sphere", "box", "torus"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if self.path not in ("static", "linear", "orbit"):
            raise ValueError(f"unknown path {self.path!r}")
        if self.path == "linear" and self.end_center is None:
            raise ValueError("linear path requires end_center")

    def center_at(self, phase: float) -> np.ndarray:
        c = np.asarray(self.center, dtype=np.float64)
        if self.path == "static":
            return c
        if self.path == "linear":
            return c + phase * (np.asarray(self.end_center) - c)
        theta = _TWO_PI * (phase + self.phase_offset)
        return c + self.orbit_radius * np.array([np.cos(theta), 0.0, np.sin(theta)])

    def bound_radius(self) -> float:
        if self.kind == "sphere":
            return self.radius
        if self.kind == "box":
            return float(np.linalg.norm(self.half_extents))
        return self.major_radius + self.radius

    def sdf(self, pts: np.ndarray, phase: float) -> np.ndarray:
        q = pts - self.center_at(phase)
        if self.kind == "sphere":
            return np.linalg.norm(q, axis=-1) - self.radius
        if self.kind == "box":
            d = np.abs(q) - np.asarray(self.half_extents)
            outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
            inside = np.minimum(d.max(axis=-1), 0.0)
            return outside + inside
        ring = np.hypot(np.hypot(q[..., 0], q[..., 2]) - self.major_radius, q[..., 1])
        return ring - self.radius


@dataclass
class DensityVolume:
    values: np.ndarray  # (Nx, Ny, Nz) float32

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ValueError("density volume must be 3-D")
        if not np.isfinite(self.values).all() or (self.values < 0).any():
            raise ValueError("density must be finite and nonnegative")

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass
class FeatureVolume:
    values: np.ndarray  # (Nx, Ny, Nz, FEATURE_DIM) float32

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 4 or self.values.shape[-1] != FEATURE_DIM:
            raise ValueError(f"feature volume must be (..,{FEATURE_DIM})")

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.values.shape[:3]


@dataclass
class SyntheticScene:
    resolution: tuple[int, int, int]
    num_frames: int
    primitives: list[Primitive]
    feature_seed: int = 7
    mlp_seed: int = 11
    density_scale: float = DENSITY_SCALE
    name: str = "scene"

    def __post_init__(self):
        if isinstance(self.resolution, int):
            self.resolution = (self.resolution,) * 3
        self.resolution = tuple(int(n) for n in self.resolution)
        if min(self.resolution) < 2:
            raise ValueError("resolution must be at least 2 vertices per axis")
        if self.num_frames < 1:
            raise ValueError("num_frames must be >= 1")
        rng = np.random.default_rng(self.feature_seed)
        self._feat_a = rng.normal(0.0, 3.0, (FEATURE_DIM, 4))
        self._feat_b = rng.normal(0.0, 1.0, FEATURE_DIM)
        self.validate_containment()

    def phase(self, frame: int) -> float:
        if not (0 <= frame < self.num_frames):
            raise ValueError(f"frame {frame} outside [0, {self.num_frames})")
        return frame / max(self.num_frames - 1, 1)

    def validate_containment(self) -> None:
        for f in range(self.num_frames):
            ph = self.phase(f)
            for i, prim in enumerate(self.primitives):
                c = prim.center_at(ph)
                r = prim.bound_radius()
                if (c - r < 0.0).any() or (c + r > 1.0).any():
                    raise ValueError(
                        f"primitive {i} ({prim.kind}) leaves the unit cube at frame {f}: "
                        f"center {np.round(c, 4).tolist()}, bound radius {r:.4g}"
                    )

    def density_at(self, pts: np.ndarray, phase: float) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        if not self.primitives:
            return np.zeros(pts.shape[:-1])
        sdf = self.primitives[0].sdf(pts, phase)
        for prim in self.primitives[1:]:
            sdf = np.minimum(sdf, prim.sdf(pts, phase))
        return self.density_scale * np.maximum(0.0, -sdf)

    def features_at(self, pts: np.ndarray, phase: float) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        x = np.concatenate([pts, np.full(pts.shape[:-1] + (1,), phase)], axis=-1)
        z = x @ self._feat_a.T + self._feat_b
        return 1.0 / (1.0 + np.exp(-z))

    def reference_mlp(self) -> TinyMLP:
        return TinyMLP.seeded(self.mlp_seed)

    def lattice_points(self) -> np.ndarray:
        axes = [np.linspace(0.0, 1.0, n) for n in self.resolution]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def generate_frame(self, frame: int) -> tuple[DensityVolume, FeatureVolume]:
        ph = self.phase(frame)
        pts = self.lattice_points()
        dens = self.density_at(pts.reshape(-1, 3), ph).reshape(self.resolution)
        feats = self.features_at(pts.reshape(-1, 3), ph).reshape(self.resolution + (FEATURE_DIM,))
        return DensityVolume(dens.astype(np.float32)), FeatureVolume(feats.astype(np.float32))

    def to_json(self) -> dict:
        prims = []
        for p in self.primitives:
            d = asdict(p)
            if d["end_center"] is None:
                del d["end_center"]
            prims.append(d)
        return {
            "name": self.name,
            "resolution": list(self.resolution),
            "num_frames": self.num_frames,
            "feature_seed": self.feature_seed,
            "mlp_seed": self.mlp_seed,
            "density_scale": self.density_scale,
            "primitives": prims,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SyntheticScene":
        prims = []
        for p in d["primitives"]:
            p = dict(p)
            for key in ("center", "half_extents", "end_center"):
                if key in p and p[key] is not None:
                    p[key] = tuple(p[key])
            prims.append(Primitive(**p))
        return cls(
            resolution=tuple(d["resolution"]),
            num_frames=int(d["num_frames"]),
            primitives=prims,
            feature_seed=int(d.get("feature_seed", 7)),
            mlp_seed=int(d.get("mlp_seed", 11)),
            density_scale=float(d.get("density_scale", DENSITY_SCALE)),
            name=d.get("name", "scene"),
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "SyntheticScene":
        with open(path) as f:
            return cls.from_json(json.load(f))


def preset(name: str, resolution=32, num_frames: int = 4, seed: int = 7) -> SyntheticScene:
    """Ready-made scenes used by the CLI and the test suite."""
    mk = lambda prims: SyntheticScene(resolution, num_frames, prims,
                                      feature_seed=seed, mlp_seed=seed + 4, name=name)
    if name == "static_sphere":
        return mk([Primitive("sphere", center=(0.5, 0.5, 0.5), radius=0.22)])
    if name == "moving_sphere":
        return mk([Primitive("sphere", center=(0.3, 0.5, 0.5), radius=0.17,
                             path="linear", end_center=(0.7, 0.5, 0.5))])
    if name == "orbit_torus":
        return mk([Primitive("torus", center=(0.5, 0.5, 0.5), radius=0.06,
                             major_radius=0.2, path="orbit", orbit_radius=0.08)])
    if name == "box_and_sphere":
        return mk([
            Primitive("box", center=(0.35, 0.42, 0.5), half_extents=(0.1, 0.14, 0.09)),
            Primitive("sphere", center=(0.68, 0.6, 0.5), radius=0.13,
                      path="linear", end_center=(0.68, 0.38, 0.5)),
        ])
    raise ValueError(f"unknown preset {name!r} (try static_sphere, moving_sphere, "
                     f"orbit_torus, box_and_sphere)")


def default_camera(width: int = 256, height: int = 256, azimuth_deg: float = 0.0,
                   elevation_deg: float = 12.0, distance: float = 2.0) -> Camera:
    """Orbit camera looking at the cube center."""
    az, el = np.radians(azimuth_deg), np.radians(elevation_deg)
    target = np.array([0.5, 0.5, 0.5])
    eye = target + distance * np.array(
        [np.sin(az) * np.cos(el), np.sin(el), -np.cos(az) * np.cos(el)]
    )
    return Camera.look_at(eye, target, up=(0.0, 1.0, 0.0), fov_deg=40.0,
                          width=width, height=height)


def reference_render(
    scene: SyntheticScene,
    frame: int,
    camera: Camera,
    step: float | None = None,
    chunk: int = 4096,
    return_opacity: bool = False,
):
    """Ground-truth render of the analytic fields, composited over white."""
    ph = scene.phase(frame)
    mlp = scene.reference_mlp()
    if step is None:
        step = STEP_SCALE / (min(scene.resolution) - 1)
    origins, dirs = generate_rays(camera)
    out = np.zeros((len(origins), 3), dtype=np.float64)
    opac_out = np.zeros(len(origins), dtype=np.float64)
    for lo in range(0, len(origins), chunk):
        o = origins[lo : lo + chunk]
        d = dirs[lo : lo + chunk]
        tmin, tmax = ray_box_range_batch(o, d)
        mid, delta, valid = _lattice(tmin, tmax, step)
        r, kmax = mid.shape
        feats = np.zeros((r, FEATURE_DIM))
        opac = np.zeros(r)
        if kmax:
            pts = o[:, None, :] + mid[..., None] * d[:, None, :]
            sigma = np.zeros((r, kmax))
            feat_s = np.zeros((r, kmax, FEATURE_DIM))
            idx = np.nonzero(valid)
            if len(idx[0]):
                p = pts[idx]
                sigma[idx] = scene.density_at(p, ph)
                feat_s[idx] = scene.features_at(p, ph)
            sd = sigma * delta
            log_t = np.concatenate([np.zeros((r, 1)), -np.cumsum(sd, axis=1)[:, :-1]], axis=1)
            w = np.exp(log_t) * (-np.expm1(-sd))
            feats = (w[..., None] * feat_s).sum(axis=1)
            opac = w.sum(axis=1)
        enc = positional_encode_batch(d, mlp.freqs)
        rgb = decode_batch(mlp, feats, enc)
        out[lo : lo + chunk] = opac[:, None] * rgb + (1.0 - opac[:, None])
        opac_out[lo : lo + chunk] = opac
    img = out.reshape(camera.height, camera.width, 3).astype(np.float32)
    if return_opacity:
        return img, opac_out.reshape(camera.height, camera.width).astype(np.float32)
    return img


# --- volume container ---------------------------------------------------------

def save_frame_volumes(path, density: DensityVolume, features: FeatureVolume,
                       frame: int = 0) -> None:
    if density.resolution != features.resolution:
        raise ValueError("density/feature resolutions differ")
    nx, ny, nz = density.resolution
    with open(path, "wb") as f:
        f.write(VRFV_MAGIC)
        f.write(struct.pack("<HHiIII", 1, 1 + FEATURE_DIM, frame, nx, ny, nz))
        f.write(np.ascontiguousarray(density.values).tobytes())
        f.write(np.ascontiguousarray(features.values).tobytes())


def load_frame_volumes(path) -> tuple[DensityVolume, FeatureVolume, int]:
    with open(path, "rb") as f:
        if f.read(4) != VRFV_MAGIC:
            raise ValueError(f"{path}: not a volume file")
        version, channels, frame, nx, ny, nz = struct.unpack("<HHiIII", f.read(20))
        if version != 1 or channels != 1 + FEATURE_DIM:
            raise ValueError(f"{path}: unsupported volume layout v{version}/{channels}ch")
        n = nx * ny * nz
        data = np.frombuffer(f.read(4 * n * channels), dtype="<f4")
    if data.size != n * channels:
        raise ValueError(f"{path}: truncated volume data")
    dens = DensityVolume(data[:n].reshape(nx, ny, nz).copy())
    feats = FeatureVolume(data[n:].reshape(nx, ny, nz, FEATURE_DIM).copy())
    return dens, feats, frame
