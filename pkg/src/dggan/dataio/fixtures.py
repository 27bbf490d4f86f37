"""Deterministic synthetic hands for desk-scale runs.

Each record is a 21-joint articulated hand built from capsules (spheres swept
along every bone, plus a filled palm), posed at random, ray cast through a
pinhole camera and shaded. The z-buffer of the ray cast is the raw depth map,
so depth, 2-D keypoints, 3-D keypoints and intrinsics agree exactly up to
pixel and millimetre quantization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import MANIFEST, write_dataset
from .types import NUM_JOINTS, PARENTS, CameraIntrinsics, DepthMap, DepthUnit, HandSample

# hand frame: +y runs wrist -> fingers, +x towards the pinky, +z out of the palm
_BASES = np.array([
    [-20.0, 25.0, 0.0],   # thumb
    [-22.0, 88.0, 0.0],   # index
    [-2.0, 92.0, 0.0],    # middle
    [17.0, 86.0, 0.0],    # ring
    [33.0, 76.0, 0.0],    # pinky
])
_SEGMENTS = np.array([
    [40.0, 32.0, 27.0],
    [42.0, 25.0, 20.0],
    [46.0, 28.0, 22.0],
    [43.0, 27.0, 21.0],
    [34.0, 20.0, 18.0],
])
_SPLAY_DEG = np.array([-45.0, -8.0, 0.0, 8.0, 16.0])
_MAX_FLEX_DEG = np.array([
    [30.0, 45.0, 60.0],
    [80.0, 95.0, 65.0],
    [80.0, 95.0, 65.0],
    [80.0, 95.0, 65.0],
    [80.0, 95.0, 65.0],
])
_ALBEDO = np.array([
    [0.93, 0.58, 0.47],   # palm
    [0.97, 0.50, 0.40],
    [0.85, 0.70, 0.44],
    [0.80, 0.58, 0.62],
    [0.68, 0.66, 0.50],
    [0.92, 0.66, 0.70],
])

JOINT_RADIUS = 3.5
TIP_RADIUS = 3.0
SPHERE_SPACING = 0.5
PALM_SPACING = 2.0
VISIBILITY_SLACK = 0.5


@dataclass
class FixtureRecord:
    sample: HandSample
    visible: np.ndarray


def pose_hand(rng: np.random.Generator) -> np.ndarray:
    """Random articulated pose in the hand frame, ``(21, 3)`` in mm."""
    scale = rng.uniform(0.9, 1.1)
    joints = np.zeros((NUM_JOINTS, 3))
    for f in range(5):
        splay = np.deg2rad(_SPLAY_DEG[f] + rng.uniform(-8.0, 8.0))
        direction = np.array([np.sin(splay), np.cos(splay), 0.0])
        normal = np.array([0.0, 0.0, 1.0])
        if f == 0:
            # thumb sits rotated out of the palm plane
            direction = direction + np.array([0.0, 0.0, 0.35])
            direction /= np.linalg.norm(direction)
            normal = np.cross(direction, [0.0, 1.0, 0.0])
            normal /= np.linalg.norm(normal)
        curl = rng.uniform(0.0, 1.0)
        pos = _BASES[f] * scale
        base_idx = 1 + 4 * f
        joints[base_idx] = pos
        for s in range(3):
            theta = np.deg2rad(_MAX_FLEX_DEG[f, s]) * np.clip(curl + rng.uniform(-0.15, 0.15), 0.0, 1.0)
            direction, normal = (np.cos(theta) * direction + np.sin(theta) * normal,
                                 np.cos(theta) * normal - np.sin(theta) * direction)
            pos = pos + _SEGMENTS[f, s] * scale * direction
            joints[base_idx + s + 1] = pos
    return joints


def _rotation(rng):
    def rot(axis, angle):
        c, s = np.cos(angle), np.sin(angle)
        i, j = [(1, 2), (2, 0), (0, 1)][axis]
        m = np.eye(3)
        m[i, i], m[i, j], m[j, i], m[j, j] = c, -s, s, c
        return m

    # hand frame -> camera frame: fingers up the image (-y), palm towards the camera (-z)
    base = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    roll = rng.uniform(-np.pi / 3, np.pi / 3)
    pitch = rng.uniform(-np.pi / 5, np.pi / 5)
    yaw = rng.uniform(-np.pi / 4, np.pi / 4)
    return rot(2, roll) @ rot(0, pitch) @ rot(1, yaw) @ base


def _sphere_set(joints):
    """Sphere centers, radii and albedo ids covering bones and palm."""
    centers, radii, parts = [], [], []
    for j in range(1, NUM_JOINTS):
        p = PARENTS[j]
        a, b = joints[p], joints[j]
        ra = JOINT_RADIUS
        rb = TIP_RADIUS if j % 4 == 0 else JOINT_RADIUS
        n = max(int(np.ceil(np.linalg.norm(b - a) / SPHERE_SPACING)), 1)
        t = np.linspace(0.0, 1.0, n + 1)[:, None]
        centers.append(a + t * (b - a))
        radii.append(ra + t[:, 0] * (rb - ra))
        parts.append(np.full(n + 1, 0 if p == 0 else 1 + (j - 1) // 4))
    bases = [1 + 4 * f for f in range(5)]
    for a, b in zip(bases[:-1], bases[1:]):
        tri = joints[[0, a, b]]
        e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
        n1 = max(int(np.ceil(np.linalg.norm(e1) / PALM_SPACING)), 1)
        n2 = max(int(np.ceil(np.linalg.norm(e2) / PALM_SPACING)), 1)
        n = max(n1, n2)
        ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        keep = ii + jj <= n
        s, t = ii[keep] / n, jj[keep] / n
        pts = tri[0] + s[:, None] * e1 + t[:, None] * e2
        centers.append(pts)
        radii.append(np.full(len(pts), JOINT_RADIUS))
        parts.append(np.zeros(len(pts), dtype=int))
    return np.concatenate(centers), np.concatenate(radii), np.concatenate(parts)


def _raycast(dirs, centers, radii, chunk=512):
    """First hit along rays ``t * dirs`` (dirs have unit z): depth and sphere id."""
    best = np.full(len(dirs), np.inf)
    idx = np.full(len(dirs), -1)
    dd = np.einsum("pi,pi->p", dirs, dirs)
    for start in range(0, len(centers), chunk):
        c = centers[start:start + chunk]
        r = radii[start:start + chunk]
        dc = dirs @ c.T
        cc = np.einsum("si,si->s", c, c) - r**2
        disc = dc**2 - dd[:, None] * cc[None, :]
        hit = disc >= 0
        t = np.where(hit, (dc - np.sqrt(np.where(hit, disc, 0.0))) / dd[:, None], np.inf)
        t[t <= 0] = np.inf
        j = np.argmin(t, axis=1)
        tj = t[np.arange(len(dirs)), j]
        better = tj < best
        best[better] = tj[better]
        idx[better] = start + j[better]
    return best, idx


def _zbuffer(centers, radii, intrinsics, size):
    """Per-pixel first hit, testing each sphere only against pixels near its
    projected disk. Same result as ray casting every pixel against every sphere."""
    f = intrinsics.fx
    cz = centers[:, 2]
    uc = f * centers[:, 0] / cz + intrinsics.cx
    vc = f * centers[:, 1] / cz + intrinsics.cy
    reach = 1.25 * f * radii / np.maximum(cz - radii, 1e-6) + 1.5
    w = int(np.ceil(reach.max()))
    off = np.arange(-w, w + 1)
    du, dv = np.meshgrid(off, off, indexing="ij")
    cols = (np.floor(uc)[:, None] + du.ravel()[None, :]).astype(int)
    rows = (np.floor(vc)[:, None] + dv.ravel()[None, :]).astype(int)
    sphere = np.broadcast_to(np.arange(len(centers))[:, None], cols.shape)
    keep = (cols >= 0) & (cols < size) & (rows >= 0) & (rows < size)
    cols, rows, sphere = cols[keep], rows[keep], sphere[keep]
    dirs = np.stack([(cols + 0.5 - intrinsics.cx) / f, (rows + 0.5 - intrinsics.cy) / intrinsics.fy,
                     np.ones(len(cols))], -1)
    c = centers[sphere]
    dd = np.einsum("pi,pi->p", dirs, dirs)
    dc = np.einsum("pi,pi->p", dirs, c)
    disc = dc**2 - dd * (np.einsum("pi,pi->p", c, c) - radii[sphere] ** 2)
    hit = disc >= 0
    t = (dc[hit] - np.sqrt(disc[hit])) / dd[hit]
    pix = (rows * size + cols)[hit]
    sphere = sphere[hit]
    order = np.lexsort((t, pix))
    pix, t, sphere = pix[order], t[order], sphere[order]
    first = np.unique(pix, return_index=True)[1]
    depth = np.full(size * size, np.inf)
    idx = np.full(size * size, -1)
    depth[pix[first]] = t[first]
    idx[pix[first]] = sphere[first]
    return depth, idx


def _place(points, rng, f, size):
    """Translate a posed hand so its projection fits the image with a margin."""
    z0 = rng.uniform(330.0, 420.0)
    centered = points - points.mean(axis=0)
    margin = 0.08 * size
    for _ in range(60):
        z = centered[:, 2] + z0
        u = f * centered[:, 0] / z
        v = f * centered[:, 1] / z
        span = max(u.max() - u.min(), v.max() - v.min()) + 2 * f * JOINT_RADIUS / z.min()
        if span <= size - 2 * margin:
            break
        z0 *= 1.05
    z = centered[:, 2] + z0
    u = f * centered[:, 0] / z
    v = f * centered[:, 1] / z
    pad = f * JOINT_RADIUS / z.min() + margin
    # pixel-space shift keeping the hull inside, then lifted to a 3-D translation
    lo_u, hi_u = -size / 2 + pad - u.min(), size / 2 - pad - u.max()
    lo_v, hi_v = -size / 2 + pad - v.min(), size / 2 - pad - v.max()
    du = rng.uniform(min(lo_u, hi_u), max(lo_u, hi_u)) if hi_u > lo_u else 0.5 * (lo_u + hi_u)
    dv = rng.uniform(min(lo_v, hi_v), max(lo_v, hi_v)) if hi_v > lo_v else 0.5 * (lo_v + hi_v)
    shift = np.array([du * z0 / f, dv * z0 / f, z0])
    return centered + shift


def render_record(rng: np.random.Generator, image_size: int, record_id: str) -> FixtureRecord:
    f = 1.5 * image_size
    intrinsics = CameraIntrinsics(fx=f, fy=f, cx=image_size / 2.0, cy=image_size / 2.0)
    hand = pose_hand(rng)
    rot = _rotation(rng)
    centers, radii, parts = _sphere_set(hand)
    stacked = np.concatenate([hand, centers]) @ rot.T
    stacked = _place(stacked, rng, f, image_size)
    joints, centers = stacked[:NUM_JOINTS], stacked[NUM_JOINTS:]

    pix = np.arange(image_size) + 0.5
    vv, uu = np.meshgrid(pix, pix, indexing="ij")
    dirs = np.stack([(uu - intrinsics.cx) / f, (vv - intrinsics.cy) / f, np.ones_like(uu)], -1).reshape(-1, 3)
    depth, hit = _zbuffer(centers, radii, intrinsics, image_size)

    light = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.6, 0.2), -1.0])
    light /= np.linalg.norm(light)
    bg = rng.uniform(0.08, 0.35, size=3)
    ramp = rng.uniform(-0.08, 0.08, size=3)
    rgb = np.empty((len(dirs), 3))
    rgb[:] = bg + ramp * (vv.reshape(-1, 1) / image_size - 0.5)
    on = np.isfinite(depth)
    pts = dirs[on] * depth[on, None]
    normals = (pts - centers[hit[on]]) / radii[hit[on], None]
    shade = 0.35 + 0.65 * np.clip(normals @ light, 0.0, None)
    rgb[on] = _ALBEDO[parts[hit[on]]] * shade[:, None]
    rgb = np.clip(rgb, 0.0, 1.0).reshape(image_size, image_size, 3)
    depth_mm = np.where(on, depth, 0.0).reshape(image_size, image_size)

    kp2d = intrinsics.project(joints)
    visible = _visibility(joints, kp2d, intrinsics, centers, radii)
    lo = np.clip(kp2d.min(axis=0) - 4.0, 0.0, image_size)
    hi = np.clip(kp2d.max(axis=0) + 4.0, 0.0, image_size)
    sample = HandSample(
        rgb=np.round(rgb * 255.0) / 255.0,
        keypoints2d=kp2d,
        keypoints3d=joints,
        intrinsics=intrinsics,
        depth=DepthMap(np.round(depth_mm), DepthUnit.RAW_MM),
        hand_side="right",
        source_id=record_id,
        bbox=(float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1])),
    )
    return FixtureRecord(sample=sample, visible=visible)


def _visibility(joints, kp2d, intrinsics, centers, radii):
    """A joint is visible when the first surface along both its exact ray and
    its pixel-center ray belongs to the joint's own sphere."""
    k = intrinsics
    pixel_centers = np.floor(kp2d) + 0.5
    visible = np.ones(len(joints), dtype=bool)
    for uv in (kp2d, pixel_centers):
        dirs = np.stack([(uv[:, 0] - k.cx) / k.fx, (uv[:, 1] - k.cy) / k.fy, np.ones(len(uv))], -1)
        t, _ = _raycast(dirs, centers, radii)
        hits = dirs * t[:, None]
        dist = np.linalg.norm(hits - joints, axis=1)
        visible &= np.isfinite(t) & (dist <= JOINT_RADIUS + VISIBILITY_SLACK)
    return visible


def render_fixtures(count: int, image_size: int = 64, seed: int = 0, prefix: str = "") -> list[FixtureRecord]:
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    children = np.random.SeedSequence(seed).spawn(count)
    return [render_record(np.random.default_rng(child), image_size, f"{prefix}{i:06d}")
            for i, child in enumerate(children)]


def gen_fixtures(count: int, image_size: int, seed: int, out_root, *, eval_count: int = 0,
                 layout: str = "fixture") -> Path:
    """Write ``count`` training and ``eval_count`` evaluation records to ``out_root``."""
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    records = render_fixtures(count + eval_count, image_size, seed)
    splits = ["train"] * count + ["eval"] * eval_count
    root = write_dataset([r.sample for r in records], out_root, layout, splits=splits)
    manifest_path = Path(root) / MANIFEST
    manifest = json.loads(manifest_path.read_text())
    for rec, fixture in zip(manifest["records"], records):
        rec["visible"] = [int(v) for v in fixture.visible]
    manifest["generator"] = {"seed": seed, "image_size": image_size}
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return Path(root)
