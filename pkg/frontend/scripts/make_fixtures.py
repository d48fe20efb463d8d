#!/usr/bin/env python3
"""Generate the committed viewer test fixtures from the voxstream package.

Run from the repository root after installing the package:

    python3 frontend/scripts/make_fixtures.py

Everything lands in frontend/tests/fixtures/ and is committed so the
TypeScript tests never need Python at run time.  The fixtures are:

  bundle/            two-group demo bundle (16^3 translating sphere, q=2)
  bundle_empty/      one-group bundle with zero occupied voxels
  camera.json        512x512 orbit camera used for the parity render
  camera_b.json      160x160 camera aimed at the second group's frames
  cli_frame.png      `voxstream render` output for frame 1 / camera.json
  cli_frame_b.png    `voxstream render` output for frame 2 / camera_b.json
  probes.json        32 random (feature, direction) -> rgb decoder probes
  voxel_probes.json  expanded-volume spot checks for frame 1 of group 0
  decoded_hashes.json  sha256 of every decoded frame of both demo chunks
  lossless.bin       lossless re-encode of group 0 (same frame hashes)
  png16.png/.json    16-bit RGB image and its expected sample values
  gray8.png/.json    8-bit grayscale image and its expected sample values
  rangecoder.json    compressed blobs and their expected round-trip bytes
"""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from voxstream import DENSITY_GAMMA
from voxstream.codec import QuantizationProfile
from voxstream.feature_field import bake, expand
from voxstream.manifest import bundle, canonical_json_bytes, load_bundle
from voxstream.mapping import build_mapping
from voxstream.occupancy import OccupancyGrid, plan_groups, threshold_occupancy, union
from voxstream.renderer import TinyMLP, decode_batch, positional_encode_batch
from voxstream.scene import default_camera, preset

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def image_side_for(count: int) -> int:
    side = 8
    while side * side < count:
        side += 8
    return side


def write_json(path: Path, obj) -> None:
    path.write_bytes(canonical_json_bytes(obj))


def make_demo_bundle() -> Path:
    scene = preset("moving_sphere", resolution=16, num_frames=4)
    grids = [threshold_occupancy(scene.generate_frame(f)[0], DENSITY_GAMMA)
             for f in range(scene.num_frames)]
    # Pick theta so the planner must split the sequence into two groups.
    u01 = union([grids[0], grids[1]]).occupied_count
    u23 = union([grids[2], grids[3]]).occupied_count
    theta = max(u01, u23)
    plan = plan_groups(grids, theta)
    assert len(plan.groups) == 2, f"expected 2 groups, got {len(plan.groups)}"

    tables, images = [], {}
    for gid, (start, end, grid) in enumerate(plan.groups):
        side = image_side_for(grid.occupied_count)
        table = build_mapping(grid, (side, side))
        tables.append(table)
        for t in range(start, end + 1):
            dens, feats = scene.generate_frame(t)
            images[t] = bake(dens.values, feats.values, table,
                             frame_index=t, group_id=gid)

    out = FIXTURES / "bundle"
    manifest = bundle(out, plan, tables, images, scene.reference_mlp(), quantizer=2,
                      background="white", sequence="demo-mover")
    assert len(manifest["groups"]) == 2
    return out


def make_empty_bundle() -> Path:
    res = (8, 8, 8)
    grids = [OccupancyGrid(np.zeros(res, dtype=bool)) for _ in range(2)]
    plan = plan_groups(grids, 64)
    table = build_mapping(grids[0], (8, 8))
    zero_d = np.zeros(res)
    zero_f = np.zeros(res + (12,))
    images = {t: bake(zero_d, zero_f, table, frame_index=t) for t in range(2)}
    out = FIXTURES / "bundle_empty"
    bundle(out, plan, [table], images, TinyMLP.seeded(5), quantizer=2,
           background="white", sequence="empty")
    return out


def render_cli(bundle_dir: Path, frame: int, camera: Path, out: Path) -> None:
    subprocess.run(
        [sys.executable, "-m", "voxstream.cli", "render",
         "--bundle", str(bundle_dir), "--frame", str(frame),
         "--camera", str(camera), "--background", "white", "--out", str(out)],
        check=True,
    )


def make_probes(bundle_dir: Path) -> None:
    b = load_bundle(bundle_dir)
    profile = QuantizationProfile.from_json(b.manifest["groups"][0]["quant_profile"])
    rng = np.random.default_rng(2026)
    lo, hi = profile.mins[1:], profile.maxs[1:]
    # Accumulated ray features are opacity-weighted sums, so scale the
    # per-channel range by a random opacity in [0, 1].
    opac = rng.uniform(0.0, 1.0, size=(32, 1))
    feats = (lo + rng.uniform(0.0, 1.0, size=(32, len(lo))) * (hi - lo)) * opac
    dirs = rng.normal(size=(32, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rgb = decode_batch(b.mlp, feats, positional_encode_batch(dirs))
    write_json(FIXTURES / "probes.json", {
        "mlp_uri": "bundle/mlp.json",
        "probes": [
            {"feature": feats[i].tolist(), "direction": dirs[i].tolist(),
             "rgb": rgb[i].tolist()}
            for i in range(len(feats))
        ],
    })


def make_voxel_probes(bundle_dir: Path) -> None:
    b = load_bundle(bundle_dir)
    g = b.groups[0]
    vol = expand(g.images[1], g.table)
    rng = np.random.default_rng(7)
    mapped = g.table.mapped_pixels()
    verts = g.table.inverse_flat[mapped]
    picks = rng.choice(len(verts), size=8, replace=False)
    nx, ny, nz = g.table.grid_resolution
    probes = []
    for v in verts[picks]:
        x, y, z = int(v // (ny * nz)), int((v // nz) % ny), int(v % nz)
        probes.append({"voxel": [x, y, z],
                       "values": vol.packed[x, y, z].astype(float).tolist()})
    # Two vertices that carry no pixel must expand to exact zeros.
    flat_occ = set(int(v) for v in verts)
    empties = [i for i in range(nx * ny * nz) if i not in flat_occ][:2]
    for v in empties:
        x, y, z = v // (ny * nz), (v // nz) % ny, v % nz
        probes.append({"voxel": [x, y, z], "values": [0.0] * 13})
    write_json(FIXTURES / "voxel_probes.json", {"frame": 1, "group": 0,
                                                "probes": probes})


def make_codec_goldens(bundle_dir: Path) -> None:
    """Byte-exact goldens for the TypeScript decoder stack."""
    import hashlib

    from voxstream.codec import decode_gof, encode_gof
    from voxstream.rangecoder import compress

    manifest = json.loads((bundle_dir / "manifest.json").read_bytes())
    hashes = {}
    group0 = None
    for g in manifest["groups"]:
        stream = (bundle_dir / g["stream"]["uri"]).read_bytes()
        off, size = g["stream"]["chunk_offset"], g["stream"]["chunk_size"]
        decoded = decode_gof(stream[off:off + size])
        if g["group_id"] == 0:
            group0 = decoded
        hashes[str(g["group_id"])] = [
            hashlib.sha256(decoded.quantized[f].tobytes()).hexdigest()
            for f in range(decoded.quantized.shape[0])
        ]

    assert group0 is not None
    lossless = encode_gof(group0.quantized, group_id=7, frame_start=5,
                          quantizer=1, lossless=True)
    (FIXTURES / "lossless.bin").write_bytes(lossless.payload)
    hashes["lossless"] = [
        hashlib.sha256(group0.quantized[f].tobytes()).hexdigest()
        for f in range(group0.quantized.shape[0])
    ]
    write_json(FIXTURES / "decoded_hashes.json", hashes)

    cases = [b"", b"A", bytes(range(256)) * 3, b"voxstream " * 20]
    write_json(FIXTURES / "rangecoder.json", [
        {"data": list(case), "compressed": list(compress(case))}
        for case in cases
    ])


def make_png_goldens() -> None:
    from voxstream.pngio import write_png

    rng = np.random.default_rng(3)
    rgb16 = rng.integers(0, 65536, size=(9, 7, 3), dtype=np.uint16)
    write_png(FIXTURES / "png16.png", rgb16)
    write_json(FIXTURES / "png16.json",
               {"width": 7, "height": 9, "channels": 3, "bit_depth": 16,
                "pixels": rgb16.ravel().tolist()})

    gray8 = rng.integers(0, 256, size=(5, 6), dtype=np.uint8)
    write_png(FIXTURES / "gray8.png", gray8)
    write_json(FIXTURES / "gray8.json",
               {"width": 6, "height": 5, "channels": 1, "bit_depth": 8,
                "pixels": gray8.ravel().tolist()})


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    demo = make_demo_bundle()
    make_empty_bundle()

    cam = default_camera(512, 512, azimuth_deg=35.0, elevation_deg=18.0)
    write_json(FIXTURES / "camera.json", cam.to_json())
    cam_b = default_camera(160, 160, azimuth_deg=-50.0, elevation_deg=8.0)
    write_json(FIXTURES / "camera_b.json", cam_b.to_json())

    render_cli(demo, 1, FIXTURES / "camera.json", FIXTURES / "cli_frame.png")
    render_cli(demo, 2, FIXTURES / "camera_b.json", FIXTURES / "cli_frame_b.png")

    make_probes(demo)
    make_voxel_probes(demo)
    make_codec_goldens(demo)
    make_png_goldens()
    print(f"fixtures written to {FIXTURES}")


if __name__ == "__main__":
    main()
