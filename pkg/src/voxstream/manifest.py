"""Asset bundling and the streaming manifest.

The on-disk bundle mirrors the HTTP URL space: manifest.json and mlp.json
at the root, one directory per group holding its encoded stream, mapping
image and occupancy pyramid.  The manifest is canonical JSON (sorted keys,
compact separators) and validates against the shipped schema; its byte
breakdown covers feature images, mapping, occupancy and MLP, summing
exactly to total_bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import DENSITY_GAMMA, FEATURE_DIM
from .codec import (
    QuantizationProfile,
    decode_gof,
    encode_gof,
    quantize,
    read_gof_slice,
    read_stream_info,
    write_stream,
)
from .feature_field import DENSITY_SHIFT, FeatureImage
from .mapping import MappingTable, block_prefix_mask, deserialize_inverse_rgb, serialize_inverse_rgb
from .occupancy import GroupPlan, OccupancyPyramid, build_pyramid, pyramid_from_bytes, pyramid_to_bytes
from .pngio import read_png, write_png
from .renderer import ENC_FREQUENCIES, HIDDEN, TinyMLP, enc_dim

MANIFEST_VERSION = 1


class BundleError(ValueError):
    pass


def canonical_json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode() + b"\n"


def manifest_schema() -> dict:
    text = resources.files("voxstream").joinpath("schemas/manifest.schema.json").read_text()
    return json.loads(text)


def validate_manifest(manifest: dict) -> None:
    jsonschema.validate(manifest, manifest_schema())
    groups = sorted(manifest["groups"], key=lambda g: g["frame_start"])
    cursor = 0
    for g in groups:
        if g["frame_start"] != cursor:
            raise BundleError(
                f"groups must tile the frame range: expected start {cursor}, "
                f"got {g['frame_start']}"
            )
        cursor = g["frame_start"] + g["frame_count"]
    if cursor != manifest["num_frames"]:
        raise BundleError(f"groups cover {cursor} frames, manifest says {manifest['num_frames']}")
    breakdown = manifest["byte_breakdown"]
    if sum(breakdown.values()) != manifest["total_bytes"]:
        raise BundleError("byte_breakdown does not sum to total_bytes")


def bundle(
    out_dir,
    plan: GroupPlan,
    tables,  # per-group MappingTable
    images: dict[int, FeatureImage],
    mlp: TinyMLP,
    quantizer: int = 4,
    lossless: bool = False,
    background: str = "white",
    sequence: str = "sequence",
) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    missing = [f for f in range(plan.frame_count) if f not in images]
    if missing:
        raise BundleError(f"missing fitted frames: {missing}")
    grid_resolution = tables[0].grid_resolution

    mlp_bytes = canonical_json_bytes(mlp.to_json())
    (out / "mlp.json").write_bytes(mlp_bytes)

    group_entries = []
    stream_total = mapping_total = occupancy_total = 0
    for gid, (start, end, union) in enumerate(plan.groups):
        table = tables[gid]
        if table.grid_resolution != grid_resolution:
            raise BundleError("all groups must share the grid resolution")
        gdir = out / "gof" / str(gid)
        gdir.mkdir(parents=True, exist_ok=True)

        frames = [images[f].values for f in range(start, end + 1)]
        profile = QuantizationProfile.from_images(frames)
        stack = np.stack([quantize(v, profile) for v in frames])
        enc = encode_gof(stack, gid, frame_start=start, quantizer=quantizer,
                         lossless=lossless)
        info = write_stream(gdir / "stream", [enc], profile)
        chunk = info.chunks[0]
        stream_size = (gdir / "stream").stat().st_size

        coords, _ = serialize_inverse_rgb(table)
        write_png(gdir / "mapping.png", coords)
        mapping_size = (gdir / "mapping.png").stat().st_size

        pyr = build_pyramid(union)
        (gdir / "occupancy.bin").write_bytes(pyramid_to_bytes(pyr))
        occupancy_size = (gdir / "occupancy.bin").stat().st_size

        stream_total += stream_size
        mapping_total += mapping_size
        occupancy_total += occupancy_size
        group_entries.append({
            "group_id": gid,
            "frame_start": start,
            "frame_count": end - start + 1,
            "stream": {
                "uri": f"gof/{gid}/stream",
                "bytes": stream_size,
                "chunk_offset": chunk.offset,
                "chunk_size": chunk.size,
                "crc32": chunk.crc32,
                "quantizer": quantizer,
                "lossless": lossless,
            },
            "mapping": {
                "uri": f"gof/{gid}/mapping.png",
                "bytes": mapping_size,
                "width": table.image_size[0],
                "height": table.image_size[1],
                "bit_depth": 8 if coords.dtype == np.uint8 else 16,
                "layout": table.layout,
                "occupied_pixels": table.occupied_pixels,
            },
            "occupancy": {
                "uri": f"gof/{gid}/occupancy.bin",
                "bytes": occupancy_size,
                "levels": len(pyr.levels),
            },
            "quant_profile": profile.to_json(),
        })

    breakdown = {
        "feature_images": stream_total,
        "mapping": mapping_total,
        "occupancy": occupancy_total,
        "mlp": len(mlp_bytes),
    }
    manifest = {
        "format": "voxstream-manifest",
        "version": MANIFEST_VERSION,
        "sequence": sequence,
        "num_frames": plan.frame_count,
        "grid_resolution": list(grid_resolution),
        "feature_dim": FEATURE_DIM,
        "enc_frequencies": ENC_FREQUENCIES,
        "density": {
            "activation": "shifted-softplus",
            "shift": DENSITY_SHIFT,
            "gamma": DENSITY_GAMMA,
        },
        "background": background,
        "mlp": {
            "uri": "mlp.json",
            "bytes": len(mlp_bytes),
            "hidden": HIDDEN,
            "shapes": {
                "w1": [HIDDEN, FEATURE_DIM + enc_dim()],
                "b1": [HIDDEN],
                "w2": [3, HIDDEN],
                "b2": [3],
            },
        },
        "groups": group_entries,
        "byte_breakdown": breakdown,
        "total_bytes": sum(breakdown.values()),
    }
    validate_manifest(manifest)
    (out / "manifest.json").write_bytes(canonical_json_bytes(manifest))
    return manifest


@dataclass
class LoadedGroup:
    group_id: int
    frame_start: int
    frame_count: int
    table: MappingTable
    pyramid: OccupancyPyramid
    images: dict[int, FeatureImage]


@dataclass
class Bundle:
    root: Path
    manifest: dict
    mlp: TinyMLP
    groups: list[LoadedGroup]

    def group_for_frame(self, frame: int) -> LoadedGroup:
        for g in self.groups:
            if g.frame_start <= frame < g.frame_start + g.frame_count:
                return g
        raise KeyError(f"frame {frame} outside sequence (0..{self.manifest['num_frames']})")


def load_group(root: Path, manifest: dict, entry: dict) -> LoadedGroup:
    grid_resolution = tuple(manifest["grid_resolution"])
    coords = read_png(root / entry["mapping"]["uri"])
    mask = block_prefix_mask(
        (entry["mapping"]["width"], entry["mapping"]["height"]),
        entry["mapping"]["occupied_pixels"],
        entry["mapping"]["layout"],
    )
    table = deserialize_inverse_rgb(coords, mask, grid_resolution)
    table.layout = entry["mapping"]["layout"]
    pyr = pyramid_from_bytes((root / entry["occupancy"]["uri"]).read_bytes())
    info = read_stream_info(root / entry["stream"]["uri"])
    payload = read_gof_slice(root / entry["stream"]["uri"], info, entry["group_id"])
    decoded = decode_gof(payload)
    profile = QuantizationProfile.from_json(entry["quant_profile"])
    return LoadedGroup(
        entry["group_id"],
        entry["frame_start"],
        entry["frame_count"],
        table,
        pyr,
        decoded.to_images(profile),
    )


def load_bundle(root) -> Bundle:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise BundleError(f"{manifest_path}: no manifest found")
    manifest = json.loads(manifest_path.read_text())
    validate_manifest(manifest)
    mlp = TinyMLP.from_json(json.loads((root / manifest["mlp"]["uri"]).read_text()))
    groups = [load_group(root, manifest, e) for e in manifest["groups"]]
    return Bundle(root, manifest, mlp, groups)


def render_bundle_frame(bundle: Bundle, frame: int, camera, background: str | None = None):
    """Decode-path render: feature image -> expand -> march -> MLP."""
    from .renderer import render

    g = bundle.group_for_frame(frame)
    bg = background if background is not None else bundle.manifest["background"]
    return render(g.images, g.table, bundle.mlp, camera, frame,
                  pyramid=g.pyramid, background=bg)
