import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dggan.dataio import (
    AccessTrace,
    CameraIntrinsics,
    DepthMap,
    DepthPool,
    DepthUnit,
    HandSample,
    compose_bboxes,
    crop_hand,
    image_to_heatmap_coords,
    load_dataset,
    load_depth_pool,
    make_heatmap_targets,
    normalize_depth,
    palm_to_wrist,
    relative_depths,
    sample_unpaired_depth,
    wrist_to_palm,
    write_dataset,
)
from dggan.errors import DegenerateDepthError, DGGANError, EmptyPoolError, LayoutMismatchError, RecordError


def _sample(h=48, w=64, seed=0, k=21):
    rng = np.random.default_rng(seed)
    kp3d = np.column_stack([rng.uniform(-40, 40, k), rng.uniform(-40, 40, k), rng.uniform(350, 450, k)])
    intr = CameraIntrinsics(80.0, 80.0, w / 2, h / 2)
    return HandSample(
        rgb=rng.uniform(0, 1, (h, w, 3)),
        keypoints2d=intr.project(kp3d),
        keypoints3d=kp3d,
        intrinsics=intr,
        depth=DepthMap(rng.uniform(300, 500, (h, w)).round()),
        source_id=f"r{seed}",
        bbox=(4.0, 2.0, 40.0, 40.0),
    )


# --- crop_hand


def test_crop_full_image_is_identity():
    s = _sample(h=32, w=32)
    out = crop_hand(s, (0, 0, 32, 32), 32)
    np.testing.assert_allclose(out.rgb, s.rgb, atol=1e-12)
    np.testing.assert_array_equal(out.depth.values, s.depth.values)
    np.testing.assert_allclose(out.keypoints2d, s.keypoints2d)
    assert out.intrinsics == s.intrinsics


def test_crop_offset_without_resize_shifts_keypoints_and_principal_point():
    s = _sample()
    out = crop_hand(s, (10, 20, 16, 16), 16)
    np.testing.assert_allclose(out.keypoints2d, s.keypoints2d - [10, 20])
    assert out.intrinsics.cx == s.intrinsics.cx - 10
    assert out.intrinsics.cy == s.intrinsics.cy - 20
    # integer offset without resampling copies pixels exactly
    np.testing.assert_allclose(out.rgb, s.rgb[20:36, 10:26], atol=1e-12)


def test_crop_corner_keypoint_maps_to_origin():
    s = _sample()
    s.keypoints2d[3] = [7.5, 9.25]
    out = crop_hand(s, (7.5, 9.25, 20, 20), 40)
    np.testing.assert_allclose(out.keypoints2d[3], [0, 0], atol=1e-12)


def test_crop_keeps_projection_consistent():
    s = _sample()
    out = crop_hand(s, (3.0, 5.5, 37.0, 29.0), 64)
    np.testing.assert_allclose(out.intrinsics.project(out.keypoints3d), out.keypoints2d, atol=1e-9)


def test_crop_outside_image_raises():
    with pytest.raises(DGGANError):
        crop_hand(_sample(), (500, 500, 10, 10), 16)
    with pytest.raises(ValueError):
        crop_hand(_sample(), (0, 0, 0, 10), 16)


@settings(max_examples=40, deadline=None)
@given(
    x0=st.floats(0, 20), y0=st.floats(0, 8), w0=st.floats(10, 40), h0=st.floats(10, 40),
    x1=st.floats(0, 20), y1=st.floats(0, 20), w1=st.floats(4, 30), h1=st.floats(4, 30),
)
def test_crop_composition_matches_single_crop(x0, y0, w0, h0, x1, y1, w1, h1):
    s = _sample()
    outer, inner = (x0, y0, w0, h0), (x1, y1, w1, h1)
    twice = crop_hand(crop_hand(s, outer, 32), inner, 16)
    once = crop_hand(s, compose_bboxes(outer, inner, 32), 16)
    np.testing.assert_allclose(twice.keypoints2d, once.keypoints2d, atol=1e-6)


# --- palm / wrist


def test_palm_to_wrist_examples():
    kp3d = np.zeros((21, 3))
    kp3d[9] = [0, 10, 0]
    kp2d = kp3d[:, :2].copy()
    w3, w2 = palm_to_wrist(kp3d, kp2d, gamma=1.0)
    np.testing.assert_allclose(w3[0], [0, -10, 0])
    np.testing.assert_allclose(w2[0], [0, -10])
    same3, _ = palm_to_wrist(kp3d, kp2d, gamma=0.0)
    np.testing.assert_array_equal(same3, kp3d)
    coincident = kp3d.copy()
    coincident[0] = coincident[9]
    out3, _ = palm_to_wrist(coincident, coincident[:, :2], gamma=1.0)
    np.testing.assert_array_equal(out3[0], coincident[0])


@settings(max_examples=50, deadline=None)
@given(gamma=st.floats(0, 3), seed=st.integers(0, 10_000))
def test_wrist_to_palm_inverts_palm_to_wrist(gamma, seed):
    rng = np.random.default_rng(seed)
    kp3d, kp2d = rng.normal(size=(21, 3)) * 50, rng.normal(size=(21, 2)) * 20
    w3, w2 = palm_to_wrist(kp3d, kp2d, gamma=gamma)
    p3, p2 = wrist_to_palm(w3, w2, gamma=gamma)
    np.testing.assert_allclose(p3, kp3d, atol=1e-9)
    np.testing.assert_allclose(p2, kp2d, atol=1e-9)


# --- heatmaps


def test_heatmap_peak_and_sigma_falloff():
    kp = np.full((21, 2), 5.0)
    maps = make_heatmap_targets(kp, (16, 16), 1.0).maps
    assert maps.shape == (21, 16, 16)
    assert np.unravel_index(maps[0].argmax(), maps[0].shape) == (5, 5)
    assert maps[0, 5, 5] == 1.0
    assert maps[0, 5, 6] == pytest.approx(math.exp(-0.5), abs=1e-12)


def test_heatmap_out_of_bounds_keypoint_is_all_zero():
    kp = np.full((21, 2), 5.0)
    kp[2] = [-10, -10]
    maps = make_heatmap_targets(kp, (32, 32), 1.0).maps
    assert not maps[2].any()
    assert maps[1].any()


@settings(max_examples=40, deadline=None)
@given(u=st.floats(8, 24), v=st.floats(8, 24), sigma=st.floats(0.8, 1.5))
def test_heatmap_mass_for_interior_keypoints(u, v, sigma):
    maps = make_heatmap_targets(np.array([[u, v]]), (32, 32), sigma).maps
    expected = 2 * math.pi * sigma**2
    assert abs(maps[0].sum() - expected) / expected <= 0.02


def test_image_to_heatmap_coords_uses_cell_centres():
    # image point at the centre of heatmap cell (3, 4) with stride 8
    np.testing.assert_allclose(image_to_heatmap_coords(np.array([[28.0, 36.0]]), 8), [[3.0, 4.0]])


# --- depth normalization and relative depth


def test_normalize_depth_examples():
    raw = DepthMap(np.array([[100.0, 200.0], [300.0, 150.0]]))
    out = normalize_depth(raw)
    assert out.unit == DepthUnit.NORMALIZED
    np.testing.assert_allclose(out.values, [[0, 0.5], [1, 0.25]])
    with pytest.raises(DegenerateDepthError):
        normalize_depth(DepthMap(np.full((4, 4), 7.0)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e4))
def test_normalize_depth_exact_unit_range(seed, scale):
    vals = np.random.default_rng(seed).uniform(0, 1, (6, 5)) * scale
    out = normalize_depth(DepthMap(vals)).values
    assert out.min() == 0.0 and out.max() == 1.0


def test_relative_depth_examples():
    kp = np.zeros((21, 3))
    kp[:, 2] = 400.0
    kp[9] = [0, 60, 400]
    kp[1, 2] = 430.0
    z = relative_depths(kp, 0, (0, 9))
    assert z[0] == 0.0
    assert z[1] == pytest.approx(0.5)
    kp[2, 2] = 460.0
    assert relative_depths(kp)[2] == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.tuples(*[st.floats(-500, 500)] * 3), scale=st.floats(0.1, 10))
def test_relative_depth_translation_and_scale_invariance(seed, shift, scale):
    kp = np.random.default_rng(seed).normal(size=(21, 3)) * 30 + [0, 0, 400]
    base = relative_depths(kp)
    np.testing.assert_allclose(relative_depths(kp + np.array(shift)), base, atol=1e-8)
    np.testing.assert_allclose(relative_depths(kp * scale), base, atol=1e-8)


# --- unpaired sampler


def test_sampler_pool_of_one_and_empty():
    d = DepthMap(np.arange(12.0).reshape(3, 4))
    rng = np.random.default_rng(0)
    for _ in range(5):
        np.testing.assert_allclose(sample_unpaired_depth(DepthPool([d]), rng).values, normalize_depth(d).values)
    with pytest.raises(EmptyPoolError):
        sample_unpaired_depth(DepthPool([]), rng)


def test_sampler_is_seed_deterministic_and_uniform():
    pool = DepthPool([DepthMap(np.full((2, 2), float(i)), DepthUnit.NORMALIZED) for i in range(4)])

    def draws(seed, n):
        rng = np.random.default_rng(seed)
        return [int(sample_unpaired_depth(pool, rng).values[0, 0]) for _ in range(n)]

    assert draws(5, 50) == draws(5, 50)
    counts = np.bincount(draws(1, 10_000), minlength=4) / 10_000
    assert np.all((counts >= 0.22) & (counts <= 0.28))


# --- on-disk layouts


@pytest.mark.parametrize("layout", ["rhd_like", "stb_like", "mhp_like", "fixture"])
def test_write_load_round_trip(tmp_path, layout, fixture_records):
    samples = [r.sample for r in fixture_records]
    write_dataset(samples, tmp_path, layout)
    loaded = load_dataset(tmp_path, layout)
    assert len(loaded) == len(samples)
    for a, b in zip(samples, loaded):
        assert b.source_id == a.source_id
        np.testing.assert_allclose(b.rgb, a.rgb, atol=1 / 255)
        # annotations are stored with 6 decimals; palm-rooted layouts round-trip the wrist
        np.testing.assert_allclose(b.keypoints3d, a.keypoints3d, atol=1e-4)
        np.testing.assert_allclose(b.keypoints2d, a.keypoints2d, atol=1e-4)
        if layout == "mhp_like":
            assert b.depth is None
        else:
            np.testing.assert_array_equal(b.depth.values, a.depth.values)


def test_missing_depth_file_loads_as_absent(tmp_path, fixture_records):
    write_dataset([r.sample for r in fixture_records], tmp_path, "fixture")
    (tmp_path / "depth" / f"{fixture_records[1].sample.source_id}.png").unlink()
    loaded = load_dataset(tmp_path, "fixture")
    assert loaded[1].depth is None and loaded[0].depth is not None


def test_corrupt_record_names_record(tmp_path, fixture_records):
    samples = [r.sample for r in fixture_records]
    write_dataset(samples, tmp_path, "rhd_like")
    bad = samples[3].source_id
    (tmp_path / "rgb" / f"{bad}.png").write_bytes(b"not a png")
    with pytest.raises(RecordError) as exc:
        load_dataset(tmp_path, "rhd_like")
    assert bad in str(exc.value)


def test_layout_mismatch(tmp_path, fixture_records):
    write_dataset([r.sample for r in fixture_records], tmp_path, "stb_like")
    with pytest.raises(LayoutMismatchError):
        load_dataset(tmp_path, "rhd_like")
    with pytest.raises(LayoutMismatchError):
        load_dataset(tmp_path / "nowhere", "rhd_like")


def test_access_trace_and_depth_free_loading(tmp_path, fixture_records):
    write_dataset([r.sample for r in fixture_records], tmp_path, "fixture")
    trace = AccessTrace()
    loaded = load_dataset(tmp_path, "fixture", load_depth=False, trace=trace)
    n = len(fixture_records)
    assert all(s.depth is None for s in loaded)
    assert trace.count("rgb") == n and trace.count("keypoints") == n
    assert trace.count("depth") == 0
    load_depth_pool(tmp_path, "fixture", trace=trace)
    assert trace.count("pool_depth", root=tmp_path) == n


def test_crop_size_on_load(tmp_path, fixture_records):
    write_dataset([r.sample for r in fixture_records], tmp_path, "fixture")
    loaded = load_dataset(tmp_path, "fixture", crop_size=32)
    assert loaded[0].rgb.shape == (32, 32, 3)
    assert loaded[0].depth.values.shape == (32, 32)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["format_version"] == 1
