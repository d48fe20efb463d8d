"""Command-line pipeline: synth, plan, bake, fit, encode, render, bench, serve.

Every subcommand is a thin wrapper over library calls; errors surface as a
single machine-parseable line on stderr with exit code 1, argparse usage
problems exit 2.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import DENSITY_GAMMA, PIXEL_BUDGET, __version__
from .codec import QuantizationProfile, RenderContext, encode_gof, quantize, rate_distortion
from .feature_field import bake as bake_image
from .feature_field import relayout
from .manifest import bundle, load_bundle, render_bundle_frame
from .mapping import build_mapping
from .occupancy import GroupPlan, build_pyramid, plan_groups, threshold_occupancy, union
from .pngio import write_png
from .renderer import Camera
from .scene import SyntheticScene, default_camera, preset, reference_render, save_frame_volumes
from .server import ServeConfig, serve
from .training import FitConfig, LossWeights, fit_sequence, load_checkpoint, save_checkpoint


def _write_rgb_png(path, img: np.ndarray) -> None:
    u8 = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
    write_png(path, u8)


def _load_scene(arg: str) -> SyntheticScene:
    p = Path(arg)
    if p.is_dir():
        p = p / "scene.json"
    return SyntheticScene.load(p)


def _frame_grids(scene: SyntheticScene, gamma: float):
    return [threshold_occupancy(scene.generate_frame(f)[0], gamma)
            for f in range(scene.num_frames)]


def _image_side(max_count: int) -> int:
    side = int(np.ceil(np.sqrt(max(max_count, 1))))
    return max(8, -(-side // 8) * 8)


def _plan_scene(scene: SyntheticScene, gamma: float, theta: int) -> tuple[GroupPlan, tuple[int, int]]:
    plan = plan_groups(_frame_grids(scene, gamma), theta)
    side = _image_side(max(g.occupied_count for _, _, g in plan.groups))
    return plan, (side, side)


def _plan_json(plan: GroupPlan, gamma: float, theta: int, image_size) -> dict:
    return {
        "gamma": gamma,
        "theta": theta,
        "image_size": list(image_size),
        "groups": [
            {"group_id": i, "frame_start": s, "frame_count": e - s + 1}
            for i, (s, e, _) in enumerate(plan.groups)
        ],
    }


def _load_plan(scene: SyntheticScene, path) -> tuple[GroupPlan, tuple[int, int], dict]:
    spec = json.loads(Path(path).read_text())
    grids = _frame_grids(scene, spec["gamma"])
    groups = []
    for g in spec["groups"]:
        s = g["frame_start"]
        e = s + g["frame_count"] - 1
        groups.append((s, e, union(grids[s : e + 1])))
    plan = GroupPlan(groups=groups)
    return plan, tuple(spec["image_size"]), spec


def _tables(plan: GroupPlan, image_size, layout: str = "morton"):
    return [build_mapping(g, image_size, layout=layout) for _, _, g in plan.groups]


def _camera_from_args(args) -> Camera:
    if getattr(args, "camera", None):
        return Camera.from_json(json.loads(Path(args.camera).read_text()))
    return default_camera(args.size, args.size, args.azimuth, args.elevation,
                          args.distance)


# --- subcommands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.scene:
        scene = _load_scene(args.scene)
    else:
        scene = preset(args.preset, resolution=args.resolution,
                       num_frames=args.frames, seed=args.seed)
    out = Path(args.out)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    scene.save(out / "scene.json")
    for f in range(scene.num_frames):
        dens, feats = scene.generate_frame(f)
        save_frame_volumes(out / "frames" / f"frame_{f:04d}.vrfv", dens, feats, f)
    print(f"synth: {scene.name} -> {out} ({scene.num_frames} frames, "
          f"grid {'x'.join(map(str, scene.resolution))})")
    return 0


def cmd_plan(args) -> int:
    scene = _load_scene(args.scene)
    plan, image_size = _plan_scene(scene, args.gamma, args.theta)
    doc = _plan_json(plan, args.gamma, args.theta, image_size)
    Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    for g in doc["groups"]:
        print(f"group {g['group_id']}: frames [{g['frame_start']}, "
              f"{g['frame_start'] + g['frame_count'] - 1}]")
    print(f"plan: {len(doc['groups'])} groups, image {image_size[0]}x{image_size[1]} -> {args.out}")
    return 0


def cmd_bake(args) -> int:
    scene = _load_scene(args.scene)
    plan, image_size, _ = _load_plan(scene, args.plan)
    tables = _tables(plan, image_size, args.layout)
    images = {}
    for gid, (s, e, _) in enumerate(plan.groups):
        for f in range(s, e + 1):
            dens, feats = scene.generate_frame(f)
            images[f] = bake_image(dens.values, feats.values, tables[gid], f, gid)
    manifest = bundle(args.out, plan, tables, images, scene.reference_mlp(),
                      quantizer=args.q, lossless=not args.lossy,
                      background="white", sequence=scene.name)
    print(f"bake: {manifest['total_bytes']} bytes -> {args.out}")
    return 0


def cmd_fit(args) -> int:
    scene = _load_scene(args.scene)
    plan, image_size, _ = _load_plan(scene, args.plan)
    tables = _tables(plan, image_size, args.layout)
    if args.config:
        config = FitConfig.from_json(json.loads(Path(args.config).read_text()))
    else:
        config = FitConfig(iters=args.iters, ray_batch=args.ray_batch,
                           seed=args.seed, num_views=args.views,
                           view_size=args.view_size,
                           mlp_schedule=args.mlp_schedule)
    weights = LossWeights(args.lambda_s, args.lambda_t, args.lambda_tv)
    history: list = []
    images, mlp = fit_sequence(scene, plan, tables, weights, config, history)
    save_checkpoint(args.out, images, mlp)
    cfg_path = Path(args.out).with_suffix(".config.json")
    cfg_path.write_text(json.dumps(config.to_json(), indent=2, sort_keys=True) + "\n")
    for h in history:
        print(f"frame {h['frame']}: ray_mse {h['ray_mse']:.6f}")
    print(f"fit: {len(images)} frames -> {args.out}")
    return 0


def cmd_encode(args) -> int:
    scene = _load_scene(args.scene)
    plan, image_size, _ = _load_plan(scene, args.plan)
    tables = _tables(plan, image_size, args.layout)
    images, mlp = load_checkpoint(args.checkpoint)
    if args.sweep:
        qs = [int(v) for v in args.sweep.split(",")]
        heldout = default_camera(args.view_size, args.view_size, 225.0, 20.0)
        rows: dict[int, dict] = {q: {"bytes": 0, "max_abs_error": 0, "psnr": []} for q in qs}
        for gid, (s, e, grid) in enumerate(plan.groups):
            frames = [images[f].values for f in range(s, e + 1)]
            profile = QuantizationProfile.from_images(frames)
            stack = np.stack([quantize(v, profile) for v in frames])
            ctx = RenderContext(tables[gid], build_pyramid(grid), mlp,
                                heldout, profile, frame=s)
            for row in rate_distortion(stack, qs, gid, s, ctx):
                agg = rows[row["quantizer"]]
                agg["bytes"] += row["bytes"]
                agg["max_abs_error"] = max(agg["max_abs_error"], row["max_abs_error"])
                agg["psnr"].append(row["psnr"])
        print("q,bytes,max_abs_error,heldout_psnr")
        for q in qs:
            agg = rows[q]
            print(f"{q},{agg['bytes']},{agg['max_abs_error']},{min(agg['psnr']):.3f}")
    manifest = bundle(args.out, plan, tables, images, mlp,
                      quantizer=args.q, lossless=args.lossless,
                      background="white", sequence=scene.name)
    print(f"encode: q={args.q} lossless={args.lossless} "
          f"{manifest['total_bytes']} bytes -> {args.out}")
    return 0


def cmd_render(args) -> int:
    bundle_obj = load_bundle(args.bundle)
    camera = _camera_from_args(args)
    img = render_bundle_frame(bundle_obj, args.frame, camera,
                              background=args.background)
    _write_rgb_png(args.out, img)
    print(f"render: frame {args.frame} -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    scene = _load_scene(args.scene)
    plan, image_size, _ = _load_plan(scene, args.plan)
    if args.ablate == "layout":
        t_m = _tables(plan, image_size, "morton")
        t_r = _tables(plan, image_size, "rowmajor")
        print("group,q,morton_bytes,rowmajor_bytes")
        for gid, (s, e, _) in enumerate(plan.groups):
            imgs_m, imgs_r = [], []
            for f in range(s, e + 1):
                dens, feats = scene.generate_frame(f)
                img = bake_image(dens.values, feats.values, t_m[gid], f, gid)
                imgs_m.append(img.values)
                imgs_r.append(relayout(img, t_m[gid], t_r[gid]).values)
            prof = QuantizationProfile.from_images(imgs_m + imgs_r)
            sm = np.stack([quantize(v, prof) for v in imgs_m])
            sr = np.stack([quantize(v, prof) for v in imgs_r])
            bm = encode_gof(sm, gid, frame_start=s, quantizer=args.q).size_bytes
            br = encode_gof(sr, gid, frame_start=s, quantizer=args.q).size_bytes
            print(f"{gid},{args.q},{bm},{br}")
        return 0
    if args.ablate in ("temporal", "spatial"):
        lam = 1e-4
        runs = {
            "on": LossWeights(lam, lam, 0.0),
            "off": LossWeights(lam if args.ablate == "temporal" else 0.0,
                               0.0 if args.ablate == "temporal" else lam, 0.0),
        }
        config = FitConfig(iters=args.iters, seed=args.seed, num_views=args.views,
                           view_size=args.view_size)
        print(f"variant,keyframe_bytes,inter_bytes,total_bytes")
        for name, w in runs.items():
            tables = _tables(plan, image_size)
            images, _ = fit_sequence(scene, plan, tables, w, config)
            key = inter = 0
            for gid, (s, e, _) in enumerate(plan.groups):
                frames = [images[f].values for f in range(s, e + 1)]
                prof = QuantizationProfile.from_images(frames)
                stack = np.stack([quantize(v, prof) for v in frames])
                enc = encode_gof(stack, gid, frame_start=s, quantizer=args.q)
                key += enc.keyframe_bytes
                inter += enc.inter_bytes
            print(f"{name},{key},{inter},{key + inter}")
        return 0
    raise ValueError(f"unknown ablation {args.ablate!r}")


def cmd_serve(args) -> int:
    root = args.root or os.environ.get("VOXSTREAM_ROOT", ".")
    serve(ServeConfig(host=args.host, port=args.port, root=root, quiet=False))
    return 0


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voxstream",
                                description="dynamic radiance fields as streamable feature video")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic scene and its volumes")
    sp.add_argument("--preset", default="static_sphere")
    sp.add_argument("--scene", help="scene JSON to rematerialize instead of a preset")
    sp.add_argument("--resolution", type=int, default=32)
    sp.add_argument("--frames", type=int, default=4)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("plan", help="threshold occupancy and group frames")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--gamma", type=float, default=DENSITY_GAMMA)
    sp.add_argument("--theta", type=int, default=PIXEL_BUDGET)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("bake", help="bundle ground-truth feature images (no fit)")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--plan", required=True)
    sp.add_argument("--layout", choices=["morton", "rowmajor"], default="morton")
    sp.add_argument("--q", type=int, default=4)
    sp.add_argument("--lossy", action="store_true",
                    help="use the lossy DCT path instead of lossless")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_bake)

    sp = sub.add_parser("fit", help="optimize feature images against reference renders")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--plan", required=True)
    sp.add_argument("--layout", choices=["morton", "rowmajor"], default="morton")
    sp.add_argument("--config", help="fit config JSON (overrides the flags below)")
    sp.add_argument("--iters", type=int, default=600)
    sp.add_argument("--ray-batch", type=int, default=4096)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--views", type=int, default=5)
    sp.add_argument("--view-size", type=int, default=96)
    sp.add_argument("--mlp-schedule", choices=["first_group", "all", "frozen"],
                    default="first_group")
    sp.add_argument("--lambda-s", type=float, default=1e-4)
    sp.add_argument("--lambda-t", type=float, default=1e-4)
    sp.add_argument("--lambda-tv", type=float, default=1.6e-5)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("encode", help="encode a fitted checkpoint into a bundle")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--plan", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--layout", choices=["morton", "rowmajor"], default="morton")
    sp.add_argument("--q", type=int, default=4)
    sp.add_argument("--lossless", action="store_true")
    sp.add_argument("--sweep", help="comma-separated quantizers to report")
    sp.add_argument("--view-size", type=int, default=96,
                    help="held-out render size for the sweep report")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("render", help="render a frame from a bundle")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--frame", type=int, required=True)
    sp.add_argument("--camera", help="camera JSON file")
    sp.add_argument("--azimuth", type=float, default=0.0)
    sp.add_argument("--elevation", type=float, default=12.0)
    sp.add_argument("--distance", type=float, default=2.0)
    sp.add_argument("--size", type=int, default=256)
    sp.add_argument("--background", choices=["none", "white"])
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("bench", help="rate-distortion and A/B ablations")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--plan", required=True)
    sp.add_argument("--ablate", choices=["layout", "temporal", "spatial"],
                    required=True)
    sp.add_argument("--q", type=int, default=4)
    sp.add_argument("--iters", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--views", type=int, default=3)
    sp.add_argument("--view-size", type=int, default=64)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("serve", help="serve a bundle over HTTP")
    sp.add_argument("--root", help="asset root (default $VOXSTREAM_ROOT or .)")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8080)
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # one-line machine-parseable failure
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
