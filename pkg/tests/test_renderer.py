import json

import numpy as np
import pytest

from voxstream import FEATURE_DIM
from voxstream.feature_field import expand
from voxstream.occupancy import OccupancyGrid, OccupancyPyramid, build_pyramid, cell_occupancy
from voxstream.renderer import (
    Camera,
    RaySample,
    TinyMLP,
    accumulate,
    accumulate_batch,
    decode,
    decode_batch,
    enc_dim,
    generate_rays,
    march_ray,
    positional_encode,
    positional_encode_batch,
    ray_box_range,
    ray_box_range_batch,
    render,
    render_oracle,
    render_volume,
)

from conftest import bake_group, plan_scene, image_side_for


def look_cam(width=8, height=8, eye=(0.5, 0.5, -1.2)):
    return Camera.look_at(eye, (0.5, 0.5, 0.5), width=width, height=height)


# --- camera -----------------------------------------------------------------

def test_camera_orthonormality_enforced():
    m = np.eye(4)
    m[0, 0] = 2.0
    with pytest.raises(ValueError):
        Camera(50, 50, 4, 4, 8, 8, m)


def test_camera_positive_focal_enforced():
    with pytest.raises(ValueError):
        Camera(-1, 50, 4, 4, 8, 8, np.eye(4))


def test_look_at_points_camera_axis_at_target():
    cam = look_cam()
    fwd = cam.world_from_camera[:3, 2]
    to_target = np.array([0.5, 0.5, 0.5]) - cam.world_from_camera[:3, 3]
    to_target /= np.linalg.norm(to_target)
    assert np.allclose(fwd, to_target, atol=1e-12)


def test_camera_json_roundtrip():
    cam = look_cam()
    d = json.loads(json.dumps(cam.to_json()))
    back = Camera.from_json(d)
    assert back.world_from_camera == pytest.approx(cam.world_from_camera)
    assert (back.fx, back.fy, back.cx, back.cy) == (cam.fx, cam.fy, cam.cx, cam.cy)
    assert (back.width, back.height) == (cam.width, cam.height)
    assert len(d["world_from_camera"]) == 16  # flat row-major


def test_generate_rays_center_pixel_is_forward():
    cam = look_cam()
    origins, dirs = generate_rays(cam)
    assert np.allclose(origins, cam.world_from_camera[:3, 3])
    center = dirs.reshape(8, 8, 3)[3:5, 3:5].mean(axis=(0, 1))
    center /= np.linalg.norm(center)
    assert np.allclose(center, cam.world_from_camera[:3, 2], atol=1e-6)


# --- positional encoding -------------------------------------------------------

def test_enc_dim_f4_is_27():
    assert enc_dim(4) == 27


def test_encode_f0_is_direction():
    assert np.array_equal(positional_encode((1.0, 0.0, 0.0), freqs=0), [1, 0, 0])


def test_encode_f1_hand_value():
    enc = positional_encode((0.0, 0.0, 1.0), freqs=1)
    expect = [0, 0, 1, 0, 0, np.sin(np.pi), 1, 1, np.cos(np.pi)]
    assert np.allclose(enc, expect, atol=1e-12)


def test_encode_layout_interleaves_sin_cos_by_band():
    d = np.array([0.3, -0.5, np.sqrt(1 - 0.09 - 0.25)])
    enc = positional_encode(d)
    assert enc.shape == (27,)
    for i in range(4):
        s = enc[3 + 6 * i : 6 + 6 * i]
        c = enc[6 + 6 * i : 9 + 6 * i]
        assert np.allclose(s, np.sin(2**i * np.pi * d))
        assert np.allclose(c, np.cos(2**i * np.pi * d))


def test_encode_normalizes_with_warning():
    with pytest.warns(UserWarning):
        enc = positional_encode((2.0, 0.0, 0.0))
    assert np.allclose(enc[:3], [1, 0, 0])


def test_encode_batch_matches_scalar():
    rng = np.random.default_rng(0)
    dirs = rng.normal(size=(10, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    batch = positional_encode_batch(dirs)
    for i in range(10):
        assert np.allclose(batch[i], positional_encode(dirs[i]))


# --- accumulation ---------------------------------------------------------------

def mk_samples(ts, deltas, sigmas, feats):
    return [RaySample(t, d, s, np.asarray(f, dtype=np.float64))
            for t, d, s, f in zip(ts, deltas, sigmas, feats)]


def test_accumulate_empty_and_zero_sigma():
    feat, opac = accumulate([])
    assert not feat.any() and opac == 0.0
    samples = mk_samples([0.1, 0.2], [0.1, 0.1], [0.0, 0.0],
                         [np.ones(FEATURE_DIM)] * 2)
    feat, opac = accumulate(samples)
    assert not feat.any() and opac == 0.0


def test_accumulate_single_sample_half_weight():
    f = np.arange(FEATURE_DIM, dtype=np.float64)
    delta = 0.25
    sigma = np.log(2) / delta
    feat, opac = accumulate(mk_samples([0.5], [delta], [sigma], [f]))
    assert opac == pytest.approx(0.5, abs=1e-12)
    assert np.allclose(feat, 0.5 * f, atol=1e-12)


def test_accumulate_telescoping_uniform_sigma():
    sigma, L, n = 3.7, 0.8, 11
    delta = L / n
    samples = mk_samples(
        np.arange(n) * delta + delta / 2, [delta] * n, [sigma] * n,
        [np.zeros(FEATURE_DIM)] * n,
    )
    _, opac = accumulate(samples)
    assert opac == pytest.approx(1 - np.exp(-sigma * L), abs=1e-12)


def test_accumulate_validates_ordering_and_deltas():
    f = np.zeros(FEATURE_DIM)
    with pytest.raises(ValueError):
        accumulate(mk_samples([0.2, 0.1], [0.1, 0.1], [1, 1], [f, f]))
    with pytest.raises(ValueError):
        accumulate(mk_samples([0.1], [0.0], [1], [f]))


def test_split_segment_leaves_opacity_unchanged():
    f = np.zeros(FEATURE_DIM)
    one = mk_samples([0.5], [0.2], [4.0], [f])
    two = mk_samples([0.45, 0.55], [0.1, 0.1], [4.0, 4.0], [f, f])
    assert accumulate(one)[1] == pytest.approx(accumulate(two)[1], abs=1e-9)


def test_accumulate_batch_matches_scalar():
    rng = np.random.default_rng(1)
    lens = [0, 3, 1, 0, 7, 2]
    ptr = np.concatenate([[0], np.cumsum(lens)])
    total = ptr[-1]
    sigma = rng.uniform(0, 30, total)
    delta = rng.uniform(0.01, 0.1, total)
    feats = rng.normal(size=(total, FEATURE_DIM))
    bf, bo = accumulate_batch(sigma, delta, feats, ptr)
    for r, n in enumerate(lens):
        lo = ptr[r]
        ts = np.cumsum(delta[lo : lo + n])
        samples = mk_samples(ts, delta[lo : lo + n], sigma[lo : lo + n],
                             feats[lo : lo + n])
        feat, opac = accumulate(samples)
        assert np.allclose(bf[r], feat, atol=1e-12)
        assert bo[r] == pytest.approx(opac, abs=1e-12)


def test_batch_telescoping_identity():
    rng = np.random.default_rng(2)
    lens = rng.integers(0, 20, 200)
    ptr = np.concatenate([[0], np.cumsum(lens)])
    sigma = rng.uniform(0, 50, ptr[-1])
    delta = rng.uniform(0.005, 0.05, ptr[-1])
    feats = rng.normal(size=(ptr[-1], FEATURE_DIM))
    _, opac = accumulate_batch(sigma, delta, feats, ptr)
    expect = 1 - np.exp(-np.add.reduceat(sigma * delta, ptr[:-1].clip(max=max(ptr[-1] - 1, 0))))
    expect[lens == 0] = 0.0
    assert np.abs(opac - expect).max() < 1e-9
    assert (opac <= 1.0 + 1e-12).all()


# --- decode ------------------------------------------------------------------

def test_decode_zero_mlp_gives_half():
    mlp = TinyMLP(np.zeros((16, FEATURE_DIM + 27)), np.zeros(16),
                  np.zeros((3, 16)), np.zeros(3))
    rgb = decode(mlp, np.ones(FEATURE_DIM), positional_encode((0, 1.0, 0)))
    assert np.allclose(rgb, 0.5)


def test_decode_hand_trace():
    # one active hidden neuron: h0 = relu(f0 + 2), out0 = 3*h0 - 1
    w1 = np.zeros((16, FEATURE_DIM + 27))
    w1[0, 0] = 1.0
    b1 = np.zeros(16)
    b1[0] = 2.0
    w2 = np.zeros((3, 16))
    w2[0, 0] = 3.0
    b2 = np.array([-1.0, 0.0, 0.0])
    mlp = TinyMLP(w1, b1, w2, b2)
    f = np.zeros(FEATURE_DIM)
    f[0] = 0.5
    rgb = decode(mlp, f, positional_encode((0, 0, 1.0)))
    assert rgb[0] == pytest.approx(1 / (1 + np.exp(-(3 * 2.5 - 1))), abs=1e-12)
    assert rgb[1] == rgb[2] == pytest.approx(0.5)


def test_decode_matches_dense_oracle():
    rng = np.random.default_rng(3)
    mlp = TinyMLP.seeded(5)
    f = rng.normal(size=FEATURE_DIM)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    enc = positional_encode(d)
    x = np.concatenate([f, enc])
    h = np.maximum(mlp.w1 @ x + mlp.b1, 0)
    expect = 1 / (1 + np.exp(-(mlp.w2 @ h + mlp.b2)))
    assert np.allclose(decode(mlp, f, enc), expect, atol=1e-6)
    assert ((decode(mlp, f, enc) > 0) & (decode(mlp, f, enc) < 1)).all()


def test_decode_shape_errors():
    mlp = TinyMLP.seeded(0)
    with pytest.raises(ValueError):
        decode_batch(mlp, np.zeros((1, FEATURE_DIM + 1)), np.zeros((1, 27)))
    with pytest.raises(ValueError):
        decode_batch(mlp, np.zeros((1, FEATURE_DIM)), np.zeros((1, 26)))


def test_tinymlp_validation_and_io(tmp_path):
    with pytest.raises(ValueError):
        TinyMLP(np.zeros((15, 39)), np.zeros(16), np.zeros((3, 16)), np.zeros(3))
    with pytest.raises(ValueError):
        TinyMLP(np.full((16, 39), np.nan), np.zeros(16), np.zeros((3, 16)), np.zeros(3))
    mlp = TinyMLP.seeded(7)
    assert np.array_equal(mlp.w1, TinyMLP.seeded(7).w1)
    mlp.save(tmp_path / "mlp.json")
    back = TinyMLP.load(tmp_path / "mlp.json")
    for a, b in ((back.w1, mlp.w1), (back.b1, mlp.b1), (back.w2, mlp.w2), (back.b2, mlp.b2)):
        assert np.allclose(a, b, atol=1e-7)  # json stores float32-rounded values


# --- marching -----------------------------------------------------------------

def test_ray_box_range_inside_miss_parallel():
    t0, t1 = ray_box_range(np.array([0.5, 0.5, 0.5]), np.array([0.0, 0.0, 1.0]))
    assert t0 == 0.0 and t1 == pytest.approx(0.5)
    t0, t1 = ray_box_range(np.array([2.0, 2.0, 2.0]), np.array([0.0, 0.0, 1.0]))
    assert t1 <= t0  # parallel to z, outside in x/y
    t0, t1 = ray_box_range(np.array([-1.0, 0.5, 0.5]), np.array([1.0, 0.0, 0.0]))
    assert (t0, t1) == (pytest.approx(1.0), pytest.approx(2.0))
    bt0, bt1 = ray_box_range_batch(np.array([[-1.0, 0.5, 0.5]]), np.array([[1.0, 0.0, 0.0]]))
    assert bt0[0] == pytest.approx(1.0) and bt1[0] == pytest.approx(2.0)


@pytest.fixture(scope="module")
def sphere_vol():
    from voxstream.scene import preset

    scene = preset("static_sphere", resolution=16, num_frames=1)
    plan = plan_scene(scene)
    side = image_side_for(plan.groups[0][2].occupied_count)
    table, pyramid, images = bake_group(scene, plan, 0, (side, side))
    return expand(images[0], table), pyramid


def test_march_miss_is_empty(sphere_vol):
    vol, pyr = sphere_vol
    ray = (np.array([5.0, 5.0, 5.0]), np.array([0.0, 0.0, 1.0]))
    assert march_ray(vol, pyr, ray, 0.05) == []


def test_march_empty_pyramid_is_empty(sphere_vol):
    vol, _ = sphere_vol
    empty = build_pyramid(OccupancyGrid(np.zeros((16, 16, 16), dtype=bool)))
    ray = (np.array([0.5, 0.5, -1.0]), np.array([0.0, 0.0, 1.0]))
    assert march_ray(vol, empty, ray, 0.05) == []


def test_march_skip_on_off_same_nonzero_samples(sphere_vol):
    vol, pyr = sphere_vol
    rng = np.random.default_rng(4)
    step = 0.5 / 15
    for _ in range(40):
        eye = rng.normal(size=3)
        eye = 0.5 + 1.5 * eye / np.linalg.norm(eye)
        d = np.array([0.5, 0.5, 0.5]) + rng.normal(0, 0.15, 3) - eye
        ray = (eye, d)
        fast = march_ray(vol, pyr, ray, step, skip=True)
        slow = march_ray(vol, None, ray, step, skip=False)
        fast_nz = [(s.t, s.sigma) for s in fast if s.sigma != 0.0]
        slow_nz = [(s.t, s.sigma) for s in slow if s.sigma != 0.0]
        assert fast_nz == slow_nz


def test_march_lattice_structure(sphere_vol):
    vol, _ = sphere_vol
    step = 0.03
    ray = (np.array([0.5, 0.5, -0.5]), np.array([0.0, 0.0, 1.0]))
    samples = march_ray(vol, None, ray, step, skip=False)
    assert samples, "ray passes through the cube"
    ts = np.array([s.t for s in samples])
    deltas = np.array([s.delta for s in samples])
    assert (np.diff(ts) > 0).all()
    assert np.allclose(deltas[:-1], step, atol=1e-12)
    assert deltas[-1] <= step + 1e-12
    # midpoints sit on the fixed lattice anchored at box entry
    t0, _ = ray_box_range(*ray)
    k = np.round((ts - t0 - deltas / 2) / step)
    assert np.allclose(t0 + k * step + deltas / 2, ts, atol=1e-9)


def test_march_step_validation(sphere_vol):
    vol, pyr = sphere_vol
    with pytest.raises(ValueError):
        march_ray(vol, pyr, (np.zeros(3), np.array([1.0, 0, 0])), 0.0)


# --- whole-image rendering -----------------------------------------------------

def test_render_empty_scene_is_decoded_zero_feature():
    g = OccupancyGrid(np.zeros((8, 8, 8), dtype=bool))
    from voxstream.mapping import build_mapping
    from voxstream.feature_field import FeatureImage

    table = build_mapping(g, (8, 8))
    mlp = TinyMLP.seeded(1)
    cam = look_cam(4, 4)
    img = render({0: FeatureImage(np.zeros((8, 8, 13), dtype=np.float32))},
                 table, mlp, cam, 0, build_pyramid(g))
    _, dirs = generate_rays(cam)
    expect = decode_batch(mlp, np.zeros((16, FEATURE_DIM)),
                          positional_encode_batch(dirs)).reshape(4, 4, 3)
    assert np.allclose(img, expect, atol=1e-6)


def test_render_white_background_empty_scene():
    g = OccupancyGrid(np.zeros((8, 8, 8), dtype=bool))
    from voxstream.mapping import build_mapping
    from voxstream.feature_field import FeatureImage

    table = build_mapping(g, (8, 8))
    img = render({0: FeatureImage(np.zeros((8, 8, 13), dtype=np.float32))},
                 table, TinyMLP.seeded(1), look_cam(4, 4), 0, build_pyramid(g),
                 background="white")
    assert np.allclose(img, 1.0)


def test_render_deterministic_and_frame_check(sphere_vol):
    from voxstream.scene import preset

    scene = preset("static_sphere", resolution=16, num_frames=1)
    plan = plan_scene(scene)
    side = image_side_for(plan.groups[0][2].occupied_count)
    table, pyramid, images = bake_group(scene, plan, 0, (side, side))
    mlp = scene.reference_mlp()
    cam = look_cam(16, 16)
    a = render(images, table, mlp, cam, 0, pyramid)
    b = render(images, table, mlp, cam, 0, pyramid)
    assert np.array_equal(a, b)
    with pytest.raises(KeyError):
        render(images, table, mlp, cam, 5, pyramid)


def test_masked_render_bitwise_equals_unmasked(sphere_vol):
    vol, pyr = sphere_vol
    mlp = TinyMLP.seeded(2)
    cam = look_cam(24, 24)
    masked = render_volume(vol, mlp, cam, cell_mask=cell_occupancy(pyr.levels[0]))
    unmasked = render_volume(vol, mlp, cam, cell_mask=None)
    assert np.array_equal(masked, unmasked)


def test_center_pixel_differs_from_background(sphere_vol):
    vol, pyr = sphere_vol
    mlp = TinyMLP.seeded(2)
    cam = look_cam(9, 9)
    img, opac = render_volume(vol, mlp, cam, cell_mask=cell_occupancy(pyr.levels[0]),
                              background="white", return_opacity=True)
    assert opac[4, 4] > 0.8
    assert opac[0, 0] < 1e-6
    assert not np.allclose(img[4, 4], img[0, 0])


def test_fast_vs_oracle_render_psnr(sphere_vol):
    from voxstream.metrics import psnr

    vol, pyr = sphere_vol
    mlp = TinyMLP.seeded(2)
    cam = look_cam(48, 48)
    fast = render_volume(vol, mlp, cam, cell_mask=cell_occupancy(pyr.levels[0]),
                         background="white")
    slow = render_oracle(vol, mlp, cam, background="white")
    assert psnr(fast, slow) >= 40.0
