"""Per-record preprocessing: cropping, annotation remaps and training targets."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import DegenerateDepthError, DGGANError, EmptyPoolError
from .types import (
    MIDDLE_MCP,
    WRIST,
    CameraIntrinsics,
    DepthMap,
    DepthPool,
    DepthUnit,
    HandSample,
    HeatmapTargets,
)


def crop_hand(sample: HandSample, bbox, out_size: int) -> HandSample:
    """Crop ``bbox = (x0, y0, width, height)`` and resample it to a square.

    The same affine map ``u' = (u - x0) * out_size / width`` (and likewise
    for ``v``) is applied to the image, the depth map, the 2-D keypoints and
    the principal point. Regions of the box outside the image are zero.
    """
    if out_size <= 0:
        raise ValueError(f"out_size must be positive, got {out_size}")
    x0, y0, bw, bh = (float(b) for b in bbox)
    if bw <= 0 or bh <= 0:
        raise ValueError(f"bbox must have positive extent, got {bbox}")
    height, width = sample.rgb.shape[:2]
    if x0 >= width or y0 >= height or x0 + bw <= 0 or y0 + bh <= 0:
        raise DGGANError(f"bbox {tuple(bbox)} lies outside the {width}x{height} image")

    sx, sy = out_size / bw, out_size / bh
    centers = np.arange(out_size) + 0.5
    # source pixel-index coordinates (pixel centers at integers)
    src_x = x0 + centers / sx - 0.5
    src_y = y0 + centers / sy - 0.5
    grid_y, grid_x = np.meshgrid(src_y, src_x, indexing="ij")
    coords = np.stack([grid_y, grid_x])

    rgb = np.stack(
        [ndimage.map_coordinates(sample.rgb[..., c], coords, order=1, mode="constant", cval=0.0)
         for c in range(sample.rgb.shape[2])],
        axis=-1,
    )
    depth = None
    if sample.depth is not None:
        values = ndimage.map_coordinates(sample.depth.values, coords, order=0, mode="constant", cval=0.0)
        depth = DepthMap(values, sample.depth.unit)

    kp2d = (sample.keypoints2d - [x0, y0]) * [sx, sy]
    k = sample.intrinsics
    intrinsics = CameraIntrinsics(k.fx * sx, k.fy * sy, (k.cx - x0) * sx, (k.cy - y0) * sy)
    return sample.replace(rgb=np.clip(rgb, 0.0, 1.0), keypoints2d=kp2d, intrinsics=intrinsics,
                          depth=depth, bbox=(0.0, 0.0, float(out_size), float(out_size)))


def compose_bboxes(outer, inner, outer_size: int):
    """Box in original coordinates equal to cropping ``outer`` then ``inner``."""
    x0, y0, w0, h0 = outer
    x1, y1, w1, h1 = inner
    sx, sy = outer_size / w0, outer_size / h0
    return (x0 + x1 / sx, y0 + y1 / sy, w1 / sx, h1 / sy)


def palm_to_wrist(keypoints3d, keypoints2d, palm_idx: int = WRIST,
                  middle_mcp_idx: int = MIDDLE_MCP, gamma: float = 1.0):
    """Move a palm-center annotation to the wrist.

    The new joint is ``palm + gamma * (palm - middle_mcp)`` in both 3-D and 2-D.
    """
    _check_indices(keypoints3d, palm_idx, middle_mcp_idx)
    kp3d = np.array(keypoints3d, dtype=np.float64)
    kp2d = np.array(keypoints2d, dtype=np.float64)
    for kp in (kp3d, kp2d):
        palm = kp[palm_idx].copy()
        kp[palm_idx] = palm + gamma * (palm - kp[middle_mcp_idx])
    return kp3d, kp2d


def wrist_to_palm(keypoints3d, keypoints2d, palm_idx: int = WRIST,
                  middle_mcp_idx: int = MIDDLE_MCP, gamma: float = 1.0):
    """Inverse of :func:`palm_to_wrist`, used when writing palm-rooted layouts."""
    _check_indices(keypoints3d, palm_idx, middle_mcp_idx)
    kp3d = np.array(keypoints3d, dtype=np.float64)
    kp2d = np.array(keypoints2d, dtype=np.float64)
    for kp in (kp3d, kp2d):
        kp[palm_idx] = (kp[palm_idx] + gamma * kp[middle_mcp_idx]) / (1.0 + gamma)
    return kp3d, kp2d


def _check_indices(keypoints, a, b):
    n = len(keypoints)
    if not (0 <= a < n and 0 <= b < n) or a == b:
        raise IndexError(f"joint indices must be valid and distinct, got {a}, {b} for {n} joints")


def image_to_heatmap_coords(keypoints2d, stride: int) -> np.ndarray:
    """Continuous image coordinates to heatmap cell-index coordinates."""
    return np.asarray(keypoints2d, dtype=np.float64) / stride - 0.5


def make_heatmap_targets(keypoints2d, resolution, sigma: float) -> HeatmapTargets:
    """Unnormalized Gaussian per joint, peak 1 at the keypoint.

    ``keypoints2d`` are in cell-index coordinates of the ``(h, w)`` grid, so a
    keypoint at ``(x, y) = (5, 5)`` peaks in row 5, column 5. Keypoints whose
    nearest cell falls outside the grid give an all-zero map.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    h, w = resolution
    kp = np.asarray(keypoints2d, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)[None, :, None]
    xs = np.arange(w, dtype=np.float64)[None, None, :]
    dx = xs - kp[:, 0, None, None]
    dy = ys - kp[:, 1, None, None]
    maps = np.exp(-(dx**2 + dy**2) / (2.0 * sigma**2))
    col = np.floor(kp[:, 0] + 0.5)
    row = np.floor(kp[:, 1] + 0.5)
    inside = (col >= 0) & (col < w) & (row >= 0) & (row < h)
    maps[~inside] = 0.0
    return HeatmapTargets(maps=maps, sigma=float(sigma))


def normalize_depth(raw: DepthMap) -> DepthMap:
    if raw.unit != DepthUnit.RAW_MM:
        raise ValueError("normalize_depth expects a raw_mm depth map")
    lo, hi = raw.values.min(), raw.values.max()
    if hi == lo:
        raise DegenerateDepthError(f"constant depth map (value {lo}) cannot be normalized")
    return DepthMap((raw.values - lo) / (hi - lo), DepthUnit.NORMALIZED)


def relative_depths(keypoints3d, root_idx: int = WRIST, ref_bone=(WRIST, MIDDLE_MCP)) -> np.ndarray:
    """Root-relative depths in units of the reference bone length."""
    kp = np.asarray(keypoints3d, dtype=np.float64)
    a, b = ref_bone
    if a == b:
        raise ValueError("reference bone endpoints must be distinct")
    length = np.linalg.norm(kp[a] - kp[b])
    if not length > 0:
        raise DGGANError("reference bone has zero length")
    return (kp[:, 2] - kp[root_idx, 2]) / length


def bone_length(keypoints3d, ref_bone=(WRIST, MIDDLE_MCP)) -> float:
    kp = np.asarray(keypoints3d, dtype=np.float64)
    return float(np.linalg.norm(kp[ref_bone[0]] - kp[ref_bone[1]]))


def sample_unpaired_depth(pool: DepthPool, rng: np.random.Generator) -> DepthMap:
    """Uniform draw from ``pool``, returned normalized."""
    if len(pool) == 0:
        raise EmptyPoolError(f"depth pool {pool.origin!r} is empty")
    item = pool.items[int(rng.integers(len(pool)))]
    if item.unit == DepthUnit.NORMALIZED:
        return item
    return normalize_depth(item)
