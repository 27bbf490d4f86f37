import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dggan.dataio import CameraIntrinsics, bone_length, relative_depths
from dggan.errors import CoverageError
from dggan.evaluation import (
    CURVE_FILE,
    FIGURE_FILE,
    SUMMARY_FILE,
    MetricsReport,
    auc_20_50,
    decode_2d,
    emit_report,
    epe,
    pck_curve,
    percent_reduction,
    read_predictions,
    read_report,
    reconstruct_3d,
    write_predictions,
)

from oracles import auc_closed_form, auc_riemann_oracle, epe_oracle, pck_oracle


def test_decode_2d_examples():
    hm = np.zeros((2, 8, 8))
    hm[0, 4, 3] = 1.0  # row 4, column 3
    out = decode_2d(hm, 64)
    np.testing.assert_allclose(out[0], [28.0, 36.0])
    np.testing.assert_allclose(out[1], [4.0, 4.0])  # uniform map -> first cell
    last = np.zeros((1, 8, 8))
    last[0, 7, 7] = 1
    u, v = decode_2d(last, 64)[0]
    assert 0 <= u < 64 and 0 <= v < 64


def test_reconstruct_examples():
    k = CameraIntrinsics(100.0, 100.0, 32.0, 32.0)
    out = reconstruct_3d(np.array([[32.0, 32.0], [82.0, 32.0]]), np.array([0.0, 0.0]), k, 400.0, 50.0)
    np.testing.assert_allclose(out[0], [0, 0, 400])
    assert out[1, 0] == pytest.approx(200.0)
    with pytest.raises(ValueError):
        reconstruct_3d(np.zeros((1, 2)), np.zeros(1), k, 400.0, 0.0)


def test_reconstruct_round_trip_on_fixtures(fixture_records):
    for rec in fixture_records:
        s = rec.sample
        z = relative_depths(s.keypoints3d)
        out = reconstruct_3d(s.keypoints2d, z, s.intrinsics, s.keypoints3d[0, 2], bone_length(s.keypoints3d))
        np.testing.assert_allclose(out, s.keypoints3d, atol=0.5)


def test_epe_examples():
    gt = np.random.default_rng(0).normal(size=(21, 3))
    r = epe(gt, gt)
    assert r.mean == 0 and r.median == 0
    r = epe(gt + [3, 0, 0], gt)
    assert r.mean == pytest.approx(3) and r.median == pytest.approx(3)
    r = epe(np.array([[1.0, 0, 0], [3.0, 0, 0]]), np.zeros((2, 3)))
    assert (r.mean, r.median) == (2.0, 2.0)
    with pytest.raises(ValueError):
        epe(np.zeros((2, 3)), np.zeros((3, 3)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.tuples(*[st.floats(-1e3, 1e3)] * 3))
def test_epe_permutation_and_translation_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    pred, gt = rng.normal(size=(21, 3)) * 20, rng.normal(size=(21, 3)) * 20
    base = epe(pred, gt)
    perm = rng.permutation(21)
    moved = epe(pred[perm] + shift, gt[perm] + shift)
    assert moved.mean == pytest.approx(base.mean, abs=1e-9)
    assert moved.median == pytest.approx(base.median, abs=1e-9)


def test_pck_examples():
    assert pck_curve([0.0, 0.0], [1.0, 5.0]) == [(1.0, 1.0), (5.0, 1.0)]
    assert pck_curve([10.0, 30.0], [20.0, 40.0]) == [(20.0, 0.5), (40.0, 1.0)]
    assert pck_curve([1.0], []) == []
    with pytest.raises(ValueError):
        pck_curve([1.0], [5.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=50))
def test_pck_monotone_and_auc_bounded(errors):
    curve = pck_curve(errors)
    fr = [p for _, p in curve]
    assert all(0 <= p <= 1 for p in fr)
    assert all(a <= b for a, b in zip(fr, fr[1:]))
    assert 0 <= auc_20_50(curve) <= 1


def test_auc_examples():
    assert auc_20_50(pck_curve(np.zeros(10))) == 1.0
    assert auc_20_50(pck_curve(np.full(42, 35.0))) == 0.5
    linear = [(t, (t - 20) / 30) for t in np.arange(20, 51, dtype=float)]
    assert auc_20_50(linear, method="trapezoid") == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(CoverageError):
        auc_20_50([(20.0, 0.5), (40.0, 1.0)])
    with pytest.raises(CoverageError):
        auc_20_50([(20.0, 0.5)])
    with pytest.raises(ValueError):
        auc_20_50(pck_curve([1.0]), method="simpson")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 70), min_size=1, max_size=40), st.integers(2, 8))
def test_auc_invariant_to_grid_refinement(errors, refine):
    coarse = auc_20_50(pck_curve(errors))
    fine = auc_20_50(pck_curve(errors, np.linspace(20, 50, 30 * refine + 1)))
    assert fine == pytest.approx(coarse, abs=1e-12)


def test_oracles_agree_with_each_other():
    # sanity check of the two independent AUC oracles on integer errors
    rng = np.random.default_rng(1)
    for _ in range(20):
        e = rng.integers(0, 70, size=30)
        assert auc_riemann_oracle(e) == pytest.approx(auc_closed_form(e), abs=1e-6)


def test_pck_and_epe_against_oracles():
    rng = np.random.default_rng(2)
    for _ in range(50):
        errs = rng.uniform(0, 80, size=rng.integers(1, 60))
        assert pck_curve(errs) == pck_oracle(errs, range(20, 51))
        pred, gt = rng.normal(size=(21, 3)) * 30, rng.normal(size=(21, 3)) * 30
        d, mean, median = epe_oracle(pred, gt)
        r = epe(pred, gt)
        np.testing.assert_allclose(r.distances, d, rtol=1e-15, atol=1e-12)
        assert r.mean == pytest.approx(mean, rel=1e-14) and r.median == pytest.approx(median, rel=1e-14)


def test_percent_reduction():
    assert percent_reduction(10.91, 9.11) == 16.5
    assert percent_reduction(14.08, 13.12) == 6.8
    assert percent_reduction(5.0, 5.0) == 0.0
    with pytest.raises(ValueError):
        percent_reduction(0.0, 1.0)


def test_emit_report_format_and_round_trip(tmp_path):
    m = MetricsReport(epe_mean=19.0, epe_median=13.17, pck=pck_curve([10.0, 25.0, 60.0]), auc_20_50=0.839,
                      n=3, metadata={"root_alignment": "gt"})
    written = emit_report(m, tmp_path)
    assert (tmp_path / FIGURE_FILE).stat().st_size > 0
    assert len(written) == 4
    with open(tmp_path / SUMMARY_FILE) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["auc_20_50", "epe_mean_mm", "epe_median_mm", "n"]
    assert [float(x) for x in rows[1][:3]] == [0.839, 19.0, 13.17]
    with open(tmp_path / CURVE_FILE) as fh:
        crows = list(csv.reader(fh))
    assert len(crows) == 1 + 31
    fr = [float(r[1]) for r in crows[1:]]
    assert fr == sorted(fr)
    assert read_report(tmp_path) == m
    assert json.loads((tmp_path / "report_meta.json").read_text())["root_alignment"] == "gt"


def test_emit_report_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    m = MetricsReport.from_errors([1.0, 2.0], n=1)
    with pytest.raises(OSError):
        emit_report(m, blocker / "sub", figure=False)


def test_predictions_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    rows = [(f"r{i}", rng.normal(size=(21, 2)), rng.normal(size=21)) for i in range(3)]
    back = read_predictions(write_predictions(rows, tmp_path / "p.csv"))
    for (a, k, z), (b, k2, z2) in zip(rows, back):
        assert a == b
        np.testing.assert_array_equal(k, k2)
        np.testing.assert_array_equal(z, z2)
