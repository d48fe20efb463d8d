"""Quantization, the block-transform codec, and the streaming container."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import bake_group, image_side_for, plan_scene

from voxstream import FEATURE_DIM
from voxstream.codec import (
    CodecError,
    CodecUnavailableError,
    QuantizationProfile,
    RenderContext,
    decode_gof,
    dequantize,
    encode_gof,
    external_encode,
    external_encoder_available,
    pack_rgb_tiles,
    quantize,
    rate_distortion,
    read_gof_slice,
    read_stream_info,
    unpack_rgb_tiles,
    write_stream,
)
from voxstream.renderer import TinyMLP
from voxstream.scene import default_camera


@pytest.fixture(scope="module")
def sphere_quantized(sphere16_assets):
    """Quantized ground-truth images for the 2-frame static sphere."""
    _, _, _, _, images = sphere16_assets
    profile = QuantizationProfile.from_images(images.values())
    stack = np.stack([quantize(images[t].values, profile) for t in sorted(images)])
    return stack, profile


@pytest.fixture(scope="module")
def mover_quantized(mover16_assets):
    _, _, _, _, images = mover16_assets
    profile = QuantizationProfile.from_images(images.values())
    stack = np.stack([quantize(images[t].values, profile) for t in sorted(images)])
    return stack, profile


# --- quantization ------------------------------------------------------------------


def test_profile_validation():
    with pytest.raises(ValueError, match="matching"):
        QuantizationProfile(np.zeros(3), np.ones(2))
    with pytest.raises(ValueError, match="max > min"):
        QuantizationProfile(np.zeros(2), np.array([1.0, 0.0]))


def test_profile_from_images_covers_ranges_and_widens_flat_channels():
    a = np.zeros((4, 4, 2), dtype=np.float32)
    b = np.zeros((4, 4, 2), dtype=np.float32)
    a[..., 0] = -1.5
    b[..., 0] = 2.5
    # channel 1 constant across both images
    p = QuantizationProfile.from_images([a, b])
    assert p.mins[0] == pytest.approx(-1.5) and p.maxs[0] == pytest.approx(2.5)
    assert p.maxs[1] > p.mins[1]


def test_profile_json_round_trip():
    p = QuantizationProfile(np.array([-1.0, 0.0]), np.array([1.0, 3.0]))
    q = QuantizationProfile.from_json(p.to_json())
    assert np.array_equal(p.mins, q.mins) and np.array_equal(p.maxs, q.maxs)
    with pytest.raises(ValueError, match="8-bit"):
        QuantizationProfile.from_json({"bit_depth": 16, "mins": [0], "maxs": [1]})


def test_quantize_endpoints_and_midpoint():
    p = QuantizationProfile(np.array([0.0]), np.array([1.0]))
    vals = np.array([[[0.0], [0.5], [1.0], [-9.0], [9.0]]])
    q = quantize(vals, p)
    assert q.tolist() == [[[0], [128], [255], [0], [255]]]


def test_quantize_channel_mismatch():
    p = QuantizationProfile(np.array([0.0]), np.array([1.0]))
    with pytest.raises(ValueError, match="channel count"):
        quantize(np.zeros((2, 2, 3)), p)


def test_quantization_error_bounded_by_half_step():
    rng = np.random.default_rng(0)
    p = QuantizationProfile(np.array([-2.0, 0.0]), np.array([2.0, 0.5]))
    v = np.stack(
        [rng.uniform(-2.0, 2.0, (16, 16)), rng.uniform(0.0, 0.5, (16, 16))], axis=-1
    )
    back = dequantize(quantize(v, p), p)
    half_step = (p.maxs - p.mins).astype(np.float64) / 255.0 / 2.0
    assert np.all(np.abs(back - v) <= half_step + 1e-6)


def test_dequantize_dtype_and_range():
    p = QuantizationProfile(np.array([-1.0]), np.array([3.0]))
    out = dequantize(np.array([[[0], [255]]], dtype=np.uint8), p)
    assert out.dtype == np.float32
    assert out.reshape(-1).tolist() == [-1.0, 3.0]


# --- group-of-frames codec -----------------------------------------------------------


def test_lossless_round_trip_is_bit_exact():
    rng = np.random.default_rng(1)
    stack = rng.integers(0, 256, (3, 16, 24, 5), dtype=np.uint8)
    enc = encode_gof(stack, group_id=2, frame_start=7, lossless=True)
    dec = decode_gof(enc.payload)
    assert np.array_equal(dec.quantized, stack)
    assert (dec.group_id, dec.frame_start, dec.lossless) == (2, 7, True)


def test_lossy_round_trip_metadata_and_error_bound(sphere_quantized):
    stack, _ = sphere_quantized
    enc = encode_gof(stack, group_id=0, frame_start=0, quantizer=2)
    dec = decode_gof(enc.payload)
    assert dec.quantized.shape == stack.shape and dec.quantized.dtype == np.uint8
    assert (dec.quantizer, dec.lossless) == (2, False)
    err = np.abs(dec.quantized.astype(int) - stack.astype(int))
    # mapped/unmapped boundaries ring under the block transform; q=2 on this
    # content measures max 65 — bound with margin
    assert err.max() <= 80
    assert err.mean() <= 8.0


def test_closed_loop_keyframe_independent_of_later_frames(sphere_quantized):
    stack, _ = sphere_quantized
    solo = decode_gof(encode_gof(stack[:1], 0, quantizer=4).payload)
    both = decode_gof(encode_gof(stack, 0, quantizer=4).payload)
    assert np.array_equal(solo.quantized[0], both.quantized[0])


def test_constant_gray_group_is_tiny():
    stack = np.full((4, 32, 32, FEATURE_DIM + 1), 128, dtype=np.uint8)
    enc = encode_gof(stack, 0, quantizer=4)
    assert np.array_equal(decode_gof(enc.payload).quantized, stack)
    assert enc.size_bytes < 0.02 * stack.nbytes


def test_identical_frames_cost_almost_nothing_after_keyframe(sphere_quantized):
    stack, _ = sphere_quantized
    rep = np.repeat(stack[:1], 4, axis=0)
    enc = encode_gof(rep, 0, quantizer=4)
    # zero residuals leave only the per-frame entropy-stream floor
    for size in enc.frame_sizes[1:]:
        assert size < 0.25 * enc.keyframe_bytes
        assert size < 64


def test_bytes_shrink_as_quantizer_grows(sphere_quantized):
    stack, _ = sphere_quantized
    sizes = [encode_gof(stack, 0, quantizer=q).size_bytes for q in (1, 2, 4, 8, 16)]
    assert all(a > b for a, b in zip(sizes, sizes[1:]))


def test_frame_sizes_partition_payload(sphere_quantized):
    stack, _ = sphere_quantized
    enc = encode_gof(stack, 0, quantizer=4)
    assert len(enc.frame_sizes) == stack.shape[0]
    assert enc.keyframe_bytes + enc.inter_bytes == sum(enc.frame_sizes)
    assert sum(enc.frame_sizes) < enc.size_bytes  # header + frame table overhead


def test_encode_input_validation():
    with pytest.raises(ValueError, match="uint8"):
        encode_gof(np.zeros((1, 8, 8, 2), dtype=np.float32), 0)
    with pytest.raises(ValueError, match="multiple"):
        encode_gof(np.zeros((1, 12, 8, 2), dtype=np.uint8), 0)
    with pytest.raises(ValueError, match="quantizer"):
        encode_gof(np.zeros((1, 8, 8, 2), dtype=np.uint8), 0, quantizer=0)
    with pytest.raises(ValueError, match="at least one frame"):
        encode_gof(np.zeros((0, 8, 8, 2), dtype=np.uint8), 0)


def test_decode_rejects_bad_magic_and_trailing_bytes(sphere_quantized):
    stack, _ = sphere_quantized
    enc = encode_gof(stack, 0, quantizer=4)
    with pytest.raises(CodecError, match="not a group chunk"):
        decode_gof(b"XXXX" + enc.payload[4:])
    with pytest.raises(CodecError, match="trailing"):
        decode_gof(enc.payload + b"\x00")


def test_decoded_images_keyed_by_absolute_frame(sphere_quantized):
    stack, profile = sphere_quantized
    enc = encode_gof(stack, group_id=3, frame_start=10, lossless=True)
    images = decode_gof(enc.payload).to_images(profile)
    assert sorted(images) == [10, 11]
    img = images[11]
    assert (img.frame_index, img.group_id) == (11, 3)
    assert np.allclose(img.values, dequantize(stack[1], profile), atol=1e-6)


# --- stream container ------------------------------------------------------------------


def make_stream(tmp_path, stack, profile, lossless=False):
    half = stack.shape[0] // 2 or 1
    gofs = [
        encode_gof(stack[:half], 0, frame_start=0, quantizer=4, lossless=lossless),
        encode_gof(stack[half:], 1, frame_start=half, quantizer=4, lossless=lossless),
    ]
    path = tmp_path / "stream.vrfs"
    info = write_stream(path, gofs, profile)
    return path, gofs, info


def test_stream_round_trip(tmp_path, mover_quantized):
    stack, profile = mover_quantized
    path, gofs, info = make_stream(tmp_path, stack, profile)
    loaded = read_stream_info(path)
    assert loaded.image_size == info.image_size
    assert loaded.channels == profile.channels
    assert (loaded.lossless, loaded.quantizer) == (False, 4)
    assert np.allclose(loaded.profile.mins, profile.mins, atol=1e-6)
    assert len(loaded.chunks) == 2
    for gof in gofs:
        payload = read_gof_slice(path, loaded, gof.group_id)
        assert payload == gof.payload
        dec = decode_gof(payload)
        assert dec.group_id == gof.group_id
        assert dec.frame_start == gof.frame_start


def test_stream_slice_is_a_pure_byte_range(tmp_path, mover_quantized):
    stack, profile = mover_quantized
    path, gofs, _ = make_stream(tmp_path, stack, profile)
    info = read_stream_info(path)
    blob = path.read_bytes()
    for entry in info.chunks:
        assert blob[entry.offset : entry.offset + entry.size] == \
            read_gof_slice(path, info, entry.group_id)


def test_stream_decodes_one_group_without_the_rest(tmp_path, mover_quantized):
    stack, profile = mover_quantized
    path, gofs, _ = make_stream(tmp_path, stack, profile, lossless=True)
    info = read_stream_info(path)
    entry = info.chunk_for_group(1)
    with open(path, "rb") as f:
        f.seek(entry.offset)
        payload = f.read(entry.size)
    dec = decode_gof(payload)
    half = stack.shape[0] // 2
    assert np.array_equal(dec.quantized, stack[half:])


def test_stream_corruption_detected(tmp_path, mover_quantized):
    stack, profile = mover_quantized
    path, _, _ = make_stream(tmp_path, stack, profile)
    info = read_stream_info(path)
    blob = bytearray(path.read_bytes())
    blob[info.chunks[1].offset + 10] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CodecError, match="checksum"):
        read_gof_slice(path, info, 1)
    assert read_gof_slice(path, info, 1, verify=False)  # opt-out returns raw bytes


def test_stream_validation_errors(tmp_path, mover_quantized):
    stack, profile = mover_quantized
    with pytest.raises(ValueError, match="at least one group"):
        write_stream(tmp_path / "x.vrfs", [], profile)
    small = encode_gof(stack[:1, :8, :8], 0)
    big = encode_gof(stack[:1], 1)
    with pytest.raises(ValueError, match="geometry"):
        write_stream(tmp_path / "x.vrfs", [small, big], profile)
    bad = tmp_path / "bad.vrfs"
    bad.write_bytes(b"JUNK" + bytes(64))
    with pytest.raises(CodecError, match="not a feature stream"):
        read_stream_info(bad)
    path, _, info = make_stream(tmp_path, stack, profile)
    with pytest.raises(KeyError, match="group 9"):
        info.chunk_for_group(9)


# --- rate-distortion sweeps ---------------------------------------------------------


def test_rate_distortion_rows(sphere_quantized):
    stack, _ = sphere_quantized
    rows = rate_distortion(stack, [0, 2, 8])
    assert [r["quantizer"] for r in rows] == [0, 2, 8]
    lossless = rows[0]
    assert lossless["max_abs_error"] == 0 and lossless["mean_abs_error"] == 0.0
    assert rows[1]["bytes"] > rows[2]["bytes"]
    assert rows[1]["max_abs_error"] <= rows[2]["max_abs_error"]
    for r in rows:
        assert r["bytes_per_frame"] == pytest.approx(r["bytes"] / stack.shape[0])
        assert "psnr" not in r


def test_rate_distortion_with_render_context(sphere16_assets, sphere_quantized):
    _, _, table, pyramid, _ = sphere16_assets
    stack, profile = sphere_quantized
    ctx = RenderContext(
        table, pyramid, TinyMLP.seeded(0),
        default_camera(24, 24, 210.0, 15.0), profile, frame=0,
    )
    rows = rate_distortion(stack, [0, 2, 16], ctx=ctx)
    assert rows[0]["psnr"] == float("inf")
    assert np.isfinite(rows[1]["psnr"]) and np.isfinite(rows[2]["psnr"])
    assert rows[1]["psnr"] > rows[2]["psnr"]
    assert rows[1]["psnr"] > 30.0


# --- external encoder bridge -----------------------------------------------------------


def test_rgb_tile_packing_round_trip(mover_quantized):
    stack, _ = mover_quantized
    f, h, w, c = stack.shape
    packed = pack_rgb_tiles(stack)
    tiles = -(-c // 3)
    assert packed.shape == (f, tiles * h, w, 3)
    assert np.array_equal(unpack_rgb_tiles(packed, c), stack)


def test_rgb_tile_padding_slots_are_zero():
    stack = np.full((2, 8, 8, 4), 9, dtype=np.uint8)  # 4 channels -> 2 tiles, 2 pad slots
    packed = pack_rgb_tiles(stack)
    assert packed.shape == (2, 16, 8, 3)
    assert np.all(packed[:, 8:, :, 1:] == 0)
    assert np.array_equal(unpack_rgb_tiles(packed, 4), stack)


def test_rgb_tile_unpack_validates_geometry():
    with pytest.raises(ValueError):
        unpack_rgb_tiles(np.zeros((1, 9, 8, 3), dtype=np.uint8), 4)


def test_external_encoder_probe_and_missing_tool_error(mover_quantized):
    stack, _ = mover_quantized
    assert not external_encoder_available("definitely-not-a-real-encoder")
    with pytest.raises(CodecUnavailableError):
        external_encode(stack, tool="definitely-not-a-real-encoder")
