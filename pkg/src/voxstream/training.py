"""Sequential fitting of feature images against reference renders.

All gradients are analytic: the photometric term back-propagates through
the MLP decode, the transmittance-weighted accumulation, and the trilinear
gather down to individual image pixels.  Frames are optimized in sequence
order; each group's first frame carries no temporal term.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import FEATURE_DIM
from .feature_field import DENSITY_SHIFT, FeatureImage, MappingTable, bake, softplus
from .occupancy import GroupPlan, OccupancyGrid, cell_occupancy
from .renderer import (
    Camera,
    STEP_SCALE,
    TinyMLP,
    _lattice,
    generate_rays,
    positional_encode_batch,
    ray_box_range_batch,
)
from .scene import SyntheticScene, default_camera, reference_render

VRFC_MAGIC = b"VRFC"


class FitDivergedError(RuntimeError):
    pass


@dataclass
class LossWeights:
    lambda_s: float = 1e-4
    lambda_t: float = 1e-4
    lambda_tv: float = 1.6e-5

    def __post_init__(self):
        if min(self.lambda_s, self.lambda_t, self.lambda_tv) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class FitConfig:
    iters: int = 600
    lr_image: float = 0.05
    lr_mlp: float = 0.002
    ray_batch: int = 4096
    seed: int = 0
    num_views: int = 5
    view_size: int = 96
    view_distance: float = 2.0
    step_scale: float = STEP_SCALE
    mlp_schedule: str = "first_group"  # first_group | all | frozen

    def __post_init__(self):
        if self.mlp_schedule not in ("first_group", "all", "frozen"):
            raise ValueError(f"unknown mlp_schedule {self.mlp_schedule!r}")
        if self.iters < 1 or self.ray_batch < 1 or self.num_views < 1:
            raise ValueError("iters, ray_batch and num_views must be positive")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "FitConfig":
        return cls(**d)


# --- regularizers -------------------------------------------------------------

def _values(img) -> np.ndarray:
    return img.values if isinstance(img, FeatureImage) else np.asarray(img)


def loss_spatial(img) -> tuple[float, np.ndarray]:
    """Mean Manhattan difference to right/down neighbors over pixels*channels."""
    v = _values(img).astype(np.float64)
    du = v[:, 1:] - v[:, :-1]
    dv = v[1:, :] - v[:-1, :]
    norm = 1.0 / v.size
    value = (np.abs(du).sum() + np.abs(dv).sum()) * norm
    grad = np.zeros_like(v)
    su, sv = np.sign(du), np.sign(dv)
    grad[:, 1:] += su
    grad[:, :-1] -= su
    grad[1:, :] += sv
    grad[:-1, :] -= sv
    return float(value), grad * norm


def loss_temporal(img_t, img_prev) -> tuple[float, np.ndarray]:
    """L1 distance to the frozen predecessor; gradient w.r.t. the current frame."""
    a = _values(img_t).astype(np.float64)
    b = _values(img_prev).astype(np.float64)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.abs(d).sum()), np.sign(d)


def loss_photometric(pred: np.ndarray, truth: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of squared color errors over sampled rays; gradient w.r.t. pred."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"ray sets differ in shape: {p.shape} vs {t.shape}")
    r = p - t
    return float((r * r).sum()), 2.0 * r


TV_EPS = 1e-8


def loss_tv3d(vol) -> tuple[float, np.ndarray]:
    """Mean root-sum-square of forward differences over voxels.

    The value is exact (constant volumes give 0); the epsilon enters only
    the gradient denominator to keep it defined at zero-difference voxels.
    """
    v = np.asarray(getattr(vol, "values", vol), dtype=np.float64)
    dx = np.zeros_like(v)
    dy = np.zeros_like(v)
    dz = np.zeros_like(v)
    dx[:-1] = v[1:] - v[:-1]
    dy[:, :-1] = v[:, 1:] - v[:, :-1]
    dz[:, :, :-1] = v[:, :, 1:] - v[:, :, :-1]
    s2 = dx * dx + dy * dy + dz * dz
    norm = 1.0 / v.size
    value = float(np.sqrt(s2).sum() * norm)
    inv = 1.0 / np.sqrt(s2 + TV_EPS)
    gx, gy, gz = dx * inv, dy * inv, dz * inv
    grad = np.zeros_like(v)
    grad[1:] += gx[:-1]
    grad[:-1] -= gx[:-1]
    grad[:, 1:] += gy[:, :-1]
    grad[:, :-1] -= gy[:, :-1]
    grad[:, :, 1:] += gz[:, :, :-1]
    grad[:, :, :-1] -= gz[:, :, :-1]
    return value, grad * norm


# --- optimizer ----------------------------------------------------------------

class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self._state: dict[str, tuple[np.ndarray, np.ndarray, int]] = {}

    def step(self, key: str, param: np.ndarray, grad: np.ndarray) -> None:
        m, v, t = self._state.get(key, (np.zeros_like(param), np.zeros_like(param), 0))
        t += 1
        m = self.b1 * m + (1 - self.b1) * grad
        v = self.b2 * v + (1 - self.b2) * grad * grad
        mh = m / (1 - self.b1**t)
        vh = v / (1 - self.b2**t)
        param -= self.lr * mh / (np.sqrt(vh) + self.eps)
        self._state[key] = (m, v, t)


# --- photometric pipeline -----------------------------------------------------

def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class GroupPipeline:
    """Precomputed ray/sample lattice for one group's cameras.

    Geometry, the occupancy mask and the cameras are fixed across a fit, so
    the trilinear corner indices/weights and the per-ray sample layout are
    built once and reused every iteration.
    """

    image_size: tuple[int, int]
    corner_idx: np.ndarray  # (S, 8) pixel index, num_pixels = padding slot
    corner_w: np.ndarray  # (S, 8) trilinear weights
    corner_mapped: np.ndarray  # (S, 8) bool, False where the corner has no pixel
    delta: np.ndarray  # (S,)
    ray_ptr: np.ndarray  # (R+1,) CSR over rays that intersect occupied cells
    enc: np.ndarray  # (R, enc_dim) encoded directions
    hit_rays: np.ndarray  # (R,) indices into the concatenated camera ray order
    total_rays: int

    @property
    def num_pixels(self) -> int:
        return self.image_size[0] * self.image_size[1]

    def batch_samples(self, rays: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lens = self.ray_ptr[rays + 1] - self.ray_ptr[rays]
        ptr = np.concatenate([[0], np.cumsum(lens)])
        if ptr[-1] == 0:
            return np.zeros(0, dtype=np.int64), ptr
        sidx = np.repeat(self.ray_ptr[rays] - ptr[:-1], lens) + np.arange(ptr[-1])
        return sidx, ptr

    def evaluate(
        self,
        img_flat: np.ndarray,  # (P, 13) float64 raw image parameters
        mlp: TinyMLP,
        rays: np.ndarray,
        targets: np.ndarray,  # (R, 3) white-composited references, pipeline order
    ) -> tuple[float, np.ndarray, dict[str, np.ndarray]]:
        """Photometric loss over a ray batch + gradients for image and MLP."""
        p = self.num_pixels
        pad = np.concatenate([img_flat, np.zeros((1, img_flat.shape[1]))], axis=0)
        sidx, ptr = self.batch_samples(np.asarray(rays))
        ci = self.corner_idx[sidx]
        cw = self.corner_w[sidx]
        cm = self.corner_mapped[sidx]
        dlt = self.delta[sidx]

        raw_d = pad[ci, 0]
        sig_corner = softplus(raw_d + DENSITY_SHIFT) * cm
        sigma = (cw * sig_corner).sum(axis=1)
        feat = np.zeros((len(sidx), FEATURE_DIM))
        for c in range(8):
            feat += cw[:, c, None] * pad[ci[:, c], 1:]

        # transmittance weights per segment
        sd = sigma * dlt
        lens = np.diff(ptr)
        if len(sd):
            cs = np.cumsum(sd)
            excl = np.concatenate([[0.0], cs[:-1]])
            base = np.repeat(excl[ptr[:-1].clip(max=len(sd) - 1)], lens)
        else:
            excl = base = np.zeros(0)
        log_t = -(excl - base)
        alpha = -np.expm1(-sd)
        w = np.exp(log_t) * alpha

        nr = len(rays)
        f_acc = np.zeros((nr, FEATURE_DIM))
        opac = np.zeros(nr)
        if len(sd):
            starts = ptr[:-1].clip(max=len(sd) - 1)
            np.add.reduceat(w[:, None] * feat, starts, axis=0, out=f_acc)
            opac = np.add.reduceat(w, starts)
            f_acc[lens == 0] = 0.0
            opac[lens == 0] = 0.0

        enc_b = self.enc[rays]
        x = np.concatenate([f_acc, enc_b], axis=1)
        z1 = x @ mlp.w1.T + mlp.b1
        h = np.maximum(z1, 0.0)
        z2 = h @ mlp.w2.T + mlp.b2
        c_mlp = _sigmoid(z2)
        c_hat = opac[:, None] * c_mlp + (1.0 - opac[:, None])

        res = c_hat - targets[rays]
        loss = float((res * res).sum())

        # backward
        d_chat = 2.0 * res
        d_cmlp = d_chat * opac[:, None]
        g_opac = (d_chat * (c_mlp - 1.0)).sum(axis=1)
        dz2 = d_cmlp * c_mlp * (1.0 - c_mlp)
        g_w2 = dz2.T @ h
        g_b2 = dz2.sum(axis=0)
        dh = dz2 @ mlp.w2
        dz1 = dh * (z1 > 0)
        g_w1 = dz1.T @ x
        g_b1 = dz1.sum(axis=0)
        dx = dz1 @ mlp.w1
        g_facc = dx[:, :FEATURE_DIM]

        grad_pad = np.zeros_like(pad)
        if len(sd):
            gf = np.repeat(g_facc, lens, axis=0)
            go = np.repeat(g_opac, lens)
            # d loss / d feature_sample and the accumulation backward
            df = gf * w[:, None]
            r_s = (gf * feat).sum(axis=1) + go
            q = w * r_s
            cq = np.cumsum(q)
            ends = np.maximum(ptr[1:], 1) - 1
            seg_end = np.repeat(cq[ends], lens)
            suffix = seg_end - cq
            d_sd = r_s * np.exp(log_t - sd) - suffix
            d_sigma = d_sd * dlt

            d_corner_sig = cw * d_sigma[:, None]
            d_raw = d_corner_sig * cm * _sigmoid(raw_d + DENSITY_SHIFT)
            flat_idx = ci.reshape(-1)
            grad_pad[:, 0] += np.bincount(flat_idx, weights=d_raw.reshape(-1),
                                          minlength=p + 1)
            contrib = cw[:, :, None] * df[:, None, :]
            contrib = contrib.reshape(-1, FEATURE_DIM)
            for ch in range(FEATURE_DIM):
                grad_pad[:, 1 + ch] += np.bincount(flat_idx, weights=contrib[:, ch],
                                                   minlength=p + 1)
        mlp_grads = {"w1": g_w1, "b1": g_b1, "w2": g_w2, "b2": g_b2}
        return loss, grad_pad[:p], mlp_grads

    def render_rays(self, img_flat, mlp) -> tuple[np.ndarray, np.ndarray]:
        """Forward pass over every pipeline ray (white composite)."""
        allr = np.arange(len(self.ray_ptr) - 1)
        pad = np.concatenate([img_flat, np.zeros((1, img_flat.shape[1]))], axis=0)
        sidx, ptr = self.batch_samples(allr)
        ci, cw, cm, dlt = (self.corner_idx[sidx], self.corner_w[sidx],
                           self.corner_mapped[sidx], self.delta[sidx])
        sig_corner = softplus(pad[ci, 0] + DENSITY_SHIFT) * cm
        sigma = (cw * sig_corner).sum(axis=1)
        feat = np.zeros((len(sidx), FEATURE_DIM))
        for c in range(8):
            feat += cw[:, c, None] * pad[ci[:, c], 1:]
        sd = sigma * dlt
        lens = np.diff(ptr)
        f_acc = np.zeros((len(allr), FEATURE_DIM))
        opac = np.zeros(len(allr))
        if len(sd):
            cs = np.cumsum(sd)
            excl = np.concatenate([[0.0], cs[:-1]])
            base = np.repeat(excl[ptr[:-1].clip(max=len(sd) - 1)], lens)
            w = np.exp(-(excl - base)) * (-np.expm1(-sd))
            starts = ptr[:-1].clip(max=len(sd) - 1)
            np.add.reduceat(w[:, None] * feat, starts, axis=0, out=f_acc)
            opac = np.add.reduceat(w, starts)
            f_acc[lens == 0] = 0.0
            opac[lens == 0] = 0.0
        x = np.concatenate([f_acc, self.enc], axis=1)
        h = np.maximum(x @ mlp.w1.T + mlp.b1, 0.0)
        rgb = _sigmoid(h @ mlp.w2.T + mlp.b2)
        return opac[:, None] * rgb + (1.0 - opac[:, None]), opac


def build_group_pipeline(
    table: MappingTable,
    union_grid: OccupancyGrid,
    cameras: list[Camera],
    step: float,
) -> GroupPipeline:
    n = np.array(table.grid_resolution)
    nx, ny, nz = table.grid_resolution
    mask = cell_occupancy(union_grid)
    all_ci, all_cw, all_cm, all_dlt, all_lens, all_enc, all_hit = [], [], [], [], [], [], []
    ray_offset = 0
    for cam in cameras:
        origins, dirs = generate_rays(cam)
        tmin, tmax = ray_box_range_batch(origins, dirs)
        mid, delta, valid = _lattice(tmin, tmax, step)
        if mid.shape[1]:
            pts = origins[:, None, :] + mid[..., None] * dirs[:, None, :]
            g = np.clip(pts, 0.0, 1.0) * (n - 1)
            cells = np.clip(g.astype(np.int64), 0, n - 2)
            keep = valid & mask[cells[..., 0], cells[..., 1], cells[..., 2]]
        else:
            keep = np.zeros((len(origins), 0), dtype=bool)
        lens = keep.sum(axis=1)
        hit = np.nonzero(lens > 0)[0]
        if len(hit):
            ridx, kidx = np.nonzero(keep)
            gk = g[ridx, kidx]
            i0 = np.clip(gk.astype(np.int64), 0, n - 2)
            frac = gk - i0
            ci = np.empty((len(ridx), 8), dtype=np.int64)
            cw = np.empty((len(ridx), 8))
            k = 0
            for dx_ in (0, 1):
                wx = frac[:, 0] if dx_ else 1 - frac[:, 0]
                for dy_ in (0, 1):
                    wy = frac[:, 1] if dy_ else 1 - frac[:, 1]
                    for dz_ in (0, 1):
                        wz = frac[:, 2] if dz_ else 1 - frac[:, 2]
                        vflat = ((i0[:, 0] + dx_) * ny + i0[:, 1] + dy_) * nz + i0[:, 2] + dz_
                        ci[:, k] = table.forward_flat[vflat]
                        cw[:, k] = wx * wy * wz
                        k += 1
            cm = ci >= 0
            ci[~cm] = table.image_size[0] * table.image_size[1]  # padding slot
            all_ci.append(ci)
            all_cw.append(cw)
            all_cm.append(cm)
            all_dlt.append(delta[ridx, kidx])
            all_lens.append(lens[hit])
            all_enc.append(positional_encode_batch(dirs[hit]))
            all_hit.append(hit + ray_offset)
        ray_offset += len(origins)
    if all_ci:
        corner_idx = np.concatenate(all_ci)
        corner_w = np.concatenate(all_cw)
        corner_m = np.concatenate(all_cm)
        dlt = np.concatenate(all_dlt)
        lens = np.concatenate(all_lens)
        enc = np.concatenate(all_enc)
        hit_rays = np.concatenate(all_hit)
    else:
        corner_idx = np.zeros((0, 8), dtype=np.int64)
        corner_w = np.zeros((0, 8))
        corner_m = np.zeros((0, 8), dtype=bool)
        dlt = np.zeros(0)
        lens = np.zeros(0, dtype=np.int64)
        enc = np.zeros((0, positional_encode_batch(np.zeros((1, 3)) + [0, 0, 1]).shape[1]))
        hit_rays = np.zeros(0, dtype=np.int64)
    ptr = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
    return GroupPipeline(
        image_size=table.image_size,
        corner_idx=corner_idx,
        corner_w=corner_w,
        corner_mapped=corner_m,
        delta=dlt,
        ray_ptr=ptr,
        enc=enc,
        hit_rays=hit_rays,
        total_rays=ray_offset,
    )


# --- vertex-level density view (for the TV term) -------------------------------

def _density_vertices(img_flat: np.ndarray, table: MappingTable) -> tuple[np.ndarray, np.ndarray]:
    vp = table.forward_flat
    mapped = vp >= 0
    raw = np.where(mapped, img_flat[vp.clip(min=0), 0], 0.0)
    sig = softplus(raw + DENSITY_SHIFT) * mapped
    return sig.reshape(table.grid_resolution), mapped


def _tv_grad_to_pixels(img_flat, table, grad_sigma) -> np.ndarray:
    vp = table.forward_flat
    mapped = vp >= 0
    raw = np.where(mapped, img_flat[vp.clip(min=0), 0], 0.0)
    d_raw = grad_sigma.reshape(-1) * _sigmoid(raw + DENSITY_SHIFT) * mapped
    return np.bincount(vp.clip(min=0), weights=d_raw * mapped,
                       minlength=img_flat.shape[0])


# --- the sequential fit ---------------------------------------------------------

def training_cameras(config: FitConfig) -> list[Camera]:
    cams = []
    for i in range(config.num_views):
        az = 360.0 * i / config.num_views
        el = 8.0 + 22.0 * (i % 2)
        cams.append(default_camera(config.view_size, config.view_size, az, el,
                                   config.view_distance))
    return cams


def fit_sequence(
    scene: SyntheticScene,
    plan: GroupPlan,
    tables,  # per-group MappingTable, list or dict keyed by group index
    weights: LossWeights | None = None,
    config: FitConfig | None = None,
    history: list | None = None,
) -> tuple[dict[int, FeatureImage], TinyMLP]:
    weights = weights or LossWeights()
    config = config or FitConfig()
    rng = np.random.default_rng(config.seed)
    cams = training_cameras(config)
    step = config.step_scale / (min(scene.resolution) - 1)
    mlp = TinyMLP.seeded(config.seed)
    adam_mlp = Adam(config.lr_mlp)
    images: dict[int, FeatureImage] = {}

    for gid, (start, end, union) in enumerate(plan.groups):
        table = tables[gid]
        pipe = build_group_pipeline(table, union, cams, step)
        p = pipe.num_pixels
        w_img, h_img = table.image_size
        train_mlp = config.mlp_schedule == "all" or (
            config.mlp_schedule == "first_group" and gid == 0
        )
        prev_flat: np.ndarray | None = None
        for frame in range(start, end + 1):
            truth = np.concatenate(
                [reference_render(scene, frame, cam).reshape(-1, 3) for cam in cams]
            )[pipe.hit_rays]
            dens, feats = scene.generate_frame(frame)
            img_flat = (
                bake(dens.values, feats.values, table, frame, gid)
                .values.reshape(p, 1 + FEATURE_DIM)
                .astype(np.float64)
            )
            adam_img = Adam(config.lr_image)
            n_hit = len(pipe.ray_ptr) - 1
            for it in range(config.iters):
                if n_hit:
                    if config.ray_batch >= n_hit:
                        batch = np.arange(n_hit)
                    else:
                        batch = rng.choice(n_hit, size=config.ray_batch, replace=False)
                    loss_p, g_img, g_mlp = pipe.evaluate(img_flat, mlp, batch, truth)
                else:
                    loss_p, g_img = 0.0, np.zeros_like(img_flat)
                    g_mlp = None
                total = loss_p
                view = img_flat.reshape(h_img, w_img, 1 + FEATURE_DIM)
                if weights.lambda_s > 0:
                    ls, gs = loss_spatial(view)
                    total += weights.lambda_s * ls
                    g_img += weights.lambda_s * gs.reshape(p, -1)
                if weights.lambda_t > 0 and prev_flat is not None:
                    lt, gt = loss_temporal(img_flat, prev_flat)
                    total += weights.lambda_t * lt
                    g_img += weights.lambda_t * gt
                if weights.lambda_tv > 0:
                    sig, _ = _density_vertices(img_flat, table)
                    ltv, gtv = loss_tv3d(sig)
                    total += weights.lambda_tv * ltv
                    g_img[:, 0] += weights.lambda_tv * _tv_grad_to_pixels(
                        img_flat, table, gtv
                    )
                if not np.isfinite(total):
                    raise FitDivergedError(
                        f"loss diverged at frame {frame}, iter {it}: "
                        f"photometric={loss_p!r}, total={total!r}"
                    )
                adam_img.step("img", img_flat, g_img)
                if train_mlp and g_mlp is not None:
                    adam_mlp.step("w1", mlp.w1, g_mlp["w1"])
                    adam_mlp.step("b1", mlp.b1, g_mlp["b1"])
                    adam_mlp.step("w2", mlp.w2, g_mlp["w2"])
                    adam_mlp.step("b2", mlp.b2, g_mlp["b2"])
            if history is not None:
                pred, _ = pipe.render_rays(img_flat, mlp)
                mse = float(((pred - truth) ** 2).mean()) if len(truth) else 0.0
                history.append({"frame": frame, "group": gid, "loss": total,
                                "ray_mse": mse})
            images[frame] = FeatureImage(
                img_flat.reshape(h_img, w_img, -1).astype(np.float32), frame, gid
            )
            prev_flat = img_flat.copy()
    return images, mlp


# --- checkpoints ----------------------------------------------------------------

def save_checkpoint(path, images: dict[int, FeatureImage], mlp: TinyMLP) -> None:
    blob = json.dumps(mlp.to_json()).encode()
    with open(path, "wb") as f:
        f.write(VRFC_MAGIC)
        f.write(struct.pack("<HHI", 1, 0, len(images)))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for frame in sorted(images):
            img = images[frame]
            h, w, c = img.values.shape
            f.write(struct.pack("<iiIIH", img.frame_index, img.group_id, w, h, c))
            f.write(np.ascontiguousarray(img.values, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[int, FeatureImage], TinyMLP]:
    with open(path, "rb") as f:
        if f.read(4) != VRFC_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, _, count = struct.unpack("<HHI", f.read(8))
        if version != 1:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", f.read(4))
        mlp = TinyMLP.from_json(json.loads(f.read(blob_len).decode()))
        images: dict[int, FeatureImage] = {}
        for _ in range(count):
            frame, gid, w, h, c = struct.unpack("<iiIIH", f.read(18))
            data = np.frombuffer(f.read(4 * w * h * c), dtype="<f4")
            images[frame] = FeatureImage(data.reshape(h, w, c).copy(), frame, gid)
    return images, mlp
