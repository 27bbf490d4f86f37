"""Run trained networks: dataset evaluation and single-image inference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .dataio import bone_length
from .evaluation import MetricsReport, decode_2d, reconstruct_3d
from .trainer import TrainState, fit_input, prepare_rgb

ROOT_ALIGNMENT_NOTE = ("root depth and reference bone length taken from ground truth; "
                       "EPE is root-relative-aligned")


@dataclass
class Prediction:
    record_id: str
    kp2d: np.ndarray  # K x 2 image pixels
    rel_depths: np.ndarray  # K
    depth: np.ndarray | None = None  # n x n generator output in [0, 1]


@torch.no_grad()
def predict(state: TrainState, samples, batch_size: int = 16, with_depth: bool = False) -> list[Prediction]:
    """Decoded keypoints and regressed relative depths; the generator's depth map on request."""
    cfg = state.config
    state.pose.eval()
    state.generator.eval()
    size = cfg.model.input_size
    out = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        rgb = prepare_rgb(chunk, cfg)
        heatmaps, z, _ = state.pose(rgb)
        final = heatmaps[:, -1].numpy()
        depth = state.generator(rgb)[:, 0].numpy() if with_depth else None
        for i, s in enumerate(chunk):
            out.append(Prediction(s.source_id, decode_2d(final[i], size), z[i].numpy().astype(np.float64),
                                  None if depth is None else depth[i]))
    return out


def evaluate_model(state: TrainState, samples, batch_size: int = 16):
    """Predict, lift to 3-D with ground-truth root alignment, and score.

    Samples whose reconstruction puts a joint at non-positive depth are
    excluded and counted. Returns ``(MetricsReport, predictions)``.
    """

    cfg = state.config
    m = cfg.model
    preds = predict(state, samples, batch_size)
    errors, kp_err = [], []
    excluded = 0
    for s, p in zip(samples, preds):
        s = fit_input(s, m.input_size)
        kp_err.append(np.linalg.norm(p.kp2d - s.keypoints2d, axis=1).mean())
        root_z = float(s.keypoints3d[m.root_idx, 2])
        bone = bone_length(s.keypoints3d, tuple(m.ref_bone))
        xyz = reconstruct_3d(p.kp2d, p.rel_depths, s.intrinsics, root_z, bone)
        if np.any(xyz[:, 2] <= 0):
            excluded += 1
            continue
        errors.append(np.linalg.norm(xyz - s.keypoints3d, axis=1))
    if not errors:
        raise ValueError("every sample was excluded; nothing to score")
    kp_px = float(np.mean(kp_err))
    meta = {
        "root_alignment": ROOT_ALIGNMENT_NOTE,
        "pck_pooling": "all joints pooled",
        "kp2d_error_px": kp_px,
        "kp2d_error_heatmap_px": kp_px / m.heatmap_stride,
        "phase": state.phase,
        "step": state.step,
    }
    report = MetricsReport.from_errors(np.concatenate(errors), n=len(errors), excluded=excluded, metadata=meta)
    return report, preds


def depth_to_uint16(depth) -> np.ndarray:
    """[0, 1] map to 16-bit, ``round(d * 65535)``."""
    return np.round(np.clip(np.asarray(depth, dtype=np.float64), 0.0, 1.0) * 65535.0).astype(np.uint16)


def uint16_to_depth(img) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) / 65535.0
