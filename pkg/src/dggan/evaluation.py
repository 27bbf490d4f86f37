"""3-D pose metrics: EPE, PCK, AUC over 20-50 mm, and report files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import CoverageError

AUC_LO, AUC_HI = 20.0, 50.0
DEFAULT_THRESHOLDS = tuple(float(t) for t in range(20, 51))

SUMMARY_FILE = "summary.csv"
CURVE_FILE = "pck_curve.csv"
META_FILE = "report_meta.json"
FIGURE_FILE = "pck_curve.png"
PREDICTIONS_FILE = "predictions.csv"
SUMMARY_HEADER = ["auc_20_50", "epe_mean_mm", "epe_median_mm", "n"]
CURVE_HEADER = ["threshold_mm", "pck"]


def decode_2d(heatmaps, image_size) -> np.ndarray:
    """Per-joint argmax of ``K x h x w`` heatmaps, mapped to image coordinates.

    Cell ``(x, y)`` maps to the image point ``((x + 0.5) * W / w, (y + 0.5) * H / h)``.
    Ties resolve to the first cell in row-major order.
    """
    hm = np.asarray(heatmaps)
    k, h, w = hm.shape
    height, width = (image_size, image_size) if np.isscalar(image_size) else image_size
    flat = hm.reshape(k, -1).argmax(axis=1)
    ys, xs = np.divmod(flat, w)
    return np.stack([(xs + 0.5) * width / w, (ys + 0.5) * height / h], axis=1).astype(np.float64)


def reconstruct_3d(kp2d, rel_depths, intrinsics, root_depth: float, bone_length: float) -> np.ndarray:
    """Lift pixels plus root-relative depths to camera-frame millimetres.

    ``z = root_depth + Z * bone_length`` and the pinhole model is inverted
    for ``x, y``. Callers should reject results with non-positive ``z``.
    """
    if not bone_length > 0:
        raise ValueError(f"bone_length must be positive, got {bone_length}")
    kp2d = np.asarray(kp2d, dtype=np.float64)
    z = root_depth + np.asarray(rel_depths, dtype=np.float64) * bone_length
    x = (kp2d[:, 0] - intrinsics.cx) * z / intrinsics.fx
    y = (kp2d[:, 1] - intrinsics.cy) * z / intrinsics.fy
    return np.stack([x, y, z], axis=1)


class EPEResult(NamedTuple):
    distances: np.ndarray
    mean: float
    median: float


def epe(pred, gt) -> EPEResult:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    d = np.linalg.norm(pred - gt, axis=-1)
    return EPEResult(d, float(d.mean()), float(np.median(d)))


def pck_curve(errors, thresholds=DEFAULT_THRESHOLDS) -> list[tuple[float, float]]:
    """Fraction of pooled joint errors ``<= t`` for each threshold."""
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.size == 0:
        return []
    if np.any(np.diff(thresholds) < 0):
        raise ValueError("thresholds must be sorted ascending")
    errors = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    if errors.size == 0:
        raise ValueError("no errors to evaluate")
    counts = np.searchsorted(errors, thresholds, side="right")
    return [(float(t), float(c) / errors.size) for t, c in zip(thresholds, counts)]


def auc_20_50(curve, method: str = "step") -> float:
    """Normalized area under a PCK curve over [20, 50] mm.

    ``step`` treats the samples as a right-continuous step function (what a
    PCK curve is), exact whenever every breakpoint lies on the threshold grid.
    ``trapezoid`` linearly interpolates between samples.
    """
    pts = [(float(t), float(p)) for t, p in curve if AUC_LO <= t <= AUC_HI]
    ts = np.array([t for t, _ in pts])
    ps = np.array([p for _, p in pts])
    if len(ts) < 2 or not np.isclose(ts[0], AUC_LO) or not np.isclose(ts[-1], AUC_HI):
        raise CoverageError("PCK curve must include both 20 mm and 50 mm and at least 2 points")
    widths = np.diff(ts)
    if method == "step":
        area = float(np.sum(ps[:-1] * widths))
    elif method == "trapezoid":
        area = float(np.sum(0.5 * (ps[:-1] + ps[1:]) * widths))
    else:
        raise ValueError(f"unknown integration method {method!r}")
    return area / (AUC_HI - AUC_LO)


def percent_reduction(before: float, after: float) -> float:
    if not before > 0:
        raise ValueError(f"baseline must be positive, got {before}")
    return round(100.0 * (before - after) / before, 1)


@dataclass
class MetricsReport:
    epe_mean: float
    epe_median: float
    pck: list[tuple[float, float]]
    auc_20_50: float
    n: int
    excluded: int = 0
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_errors(cls, errors, n, thresholds=DEFAULT_THRESHOLDS, excluded=0, metadata=None):
        errors = np.asarray(errors, dtype=np.float64).ravel()
        curve = pck_curve(errors, thresholds)
        return cls(epe_mean=float(errors.mean()), epe_median=float(np.median(errors)), pck=curve,
                   auc_20_50=auc_20_50(curve), n=int(n), excluded=int(excluded),
                   metadata=dict(metadata or {}))


def emit_report(metrics: MetricsReport, out_dir, *, figure: bool = True) -> list[Path]:
    """Write the summary CSV, the PCK curve CSV, metadata and a curve plot."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary, curve, meta = out / SUMMARY_FILE, out / CURVE_FILE, out / META_FILE
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        w.writerow([repr(metrics.auc_20_50), repr(metrics.epe_mean), repr(metrics.epe_median), metrics.n])
    with open(curve, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for t, p in metrics.pck:
            w.writerow([repr(float(t)), repr(float(p))])
    meta.write_text(json.dumps({"excluded": metrics.excluded, **metrics.metadata}, indent=1, sort_keys=True) + "\n")
    written = [summary, curve, meta]
    if figure:
        from .plotting import plot_pck

        written.append(plot_pck({"model": metrics.pck}, out / FIGURE_FILE,
                                title=f"AUC 20-50 = {metrics.auc_20_50:.3f}"))
    return written


def read_report(out_dir) -> MetricsReport:
    out = Path(out_dir)
    with open(out / SUMMARY_FILE, newline="") as fh:
        rows = list(csv.reader(fh))
    header = [h.strip() for h in rows[0]]
    if header != SUMMARY_HEADER or len(rows) != 2:
        raise ValueError(f"{out / SUMMARY_FILE}: unexpected layout")
    auc, mean, median, n = rows[1]
    with open(out / CURVE_FILE, newline="") as fh:
        crows = list(csv.reader(fh))
    if [h.strip() for h in crows[0]] != CURVE_HEADER:
        raise ValueError(f"{out / CURVE_FILE}: unexpected header")
    pck = [(float(t), float(p)) for t, p in crows[1:]]
    meta = {}
    if (out / META_FILE).exists():
        meta = json.loads((out / META_FILE).read_text())
    excluded = int(meta.pop("excluded", 0))
    return MetricsReport(epe_mean=float(mean), epe_median=float(median), pck=pck,
                         auc_20_50=float(auc), n=int(n), excluded=excluded, metadata=meta)


def write_predictions(rows, path) -> Path:
    """``rows`` are ``(record_id, kp2d K x 2, rel_depths K)``; one CSV row per sample."""
    path = Path(path)
    rows = list(rows)
    k = len(rows[0][2]) if rows else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["record_id"] + [f"{c}{j}" for j in range(k) for c in ("u", "v", "Z")])
        for rid, kp2d, z in rows:
            vals = []
            for j in range(k):
                vals += [repr(float(kp2d[j][0])), repr(float(kp2d[j][1])), repr(float(z[j]))]
            w.writerow([rid] + vals)
    return path


def read_predictions(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    out = []
    for row in rows[1:]:
        vals = np.array([float(v) for v in row[1:]]).reshape(-1, 3)
        out.append((row[0], vals[:, :2], vals[:, 2]))
    return out
