"""Manifest-driven dataset layouts.

A dataset root holds ``manifest.json`` plus per-record files::

    manifest.json
    rgb/<id>.png         8-bit RGB, lossless
    depth/<id>.png       16-bit single channel, millimetres (optional)
    keypoints/<id>.txt   K lines of "u v x y z"

``stb_like`` and ``mhp_like`` roots annotate the palm center instead of the
wrist as joint 0; the loader remaps it. ``mhp_like`` roots carry no depth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import LayoutMismatchError, RecordError
from .preprocess import crop_hand, palm_to_wrist, wrist_to_palm
from .types import CameraIntrinsics, DepthMap, DepthPool, DepthUnit, HandSample

MANIFEST = "manifest.json"
FORMAT_VERSION = 1
LAYOUTS = ("rhd_like", "stb_like", "mhp_like", "fixture")
PALM_ROOTED = ("stb_like", "mhp_like")
SPLITS = ("train", "eval")


@dataclass
class AccessTrace:
    """Log of every file the loaders touch, as ``(kind, record_id, path)``."""

    events: list[tuple[str, str, str]] = field(default_factory=list)

    def record(self, kind, record_id, path):
        self.events.append((kind, str(record_id), str(path)))

    def count(self, kind, root=None) -> int:
        root = None if root is None else str(Path(root).resolve())
        return sum(
            1 for k, _, p in self.events
            if k == kind and (root is None or str(Path(p).resolve()).startswith(root))
        )


def read_manifest(root, layout: str) -> dict:
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    root = Path(root)
    path = root / MANIFEST
    if not root.is_dir() or not path.is_file():
        raise LayoutMismatchError(f"{root}: no {MANIFEST}; not a {layout} dataset root")
    try:
        manifest = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise LayoutMismatchError(f"{path}: unreadable manifest ({exc})") from exc
    if manifest.get("layout") != layout:
        raise LayoutMismatchError(
            f"{root}: manifest declares layout {manifest.get('layout')!r}, expected {layout!r}"
        )
    if not isinstance(manifest.get("records"), list):
        raise LayoutMismatchError(f"{path}: manifest has no record list")
    return manifest


def _records(manifest, split):
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
    return [r for r in manifest["records"] if r.get("split", "train") == split]


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def write_rgb(path, rgb) -> None:
    data = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def read_depth16(path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode not in ("I;16", "I"):
            raise ValueError(f"expected a 16-bit single-channel image, got mode {img.mode}")
        return np.asarray(img, dtype=np.float64)


def write_depth16(path, values) -> None:
    data = np.round(np.clip(values, 0, 65535)).astype(np.uint16)
    Image.fromarray(data).save(path, format="PNG")


def _read_keypoints(path, num_joints):
    rows = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if rows.shape != (num_joints, 5):
        raise ValueError(f"expected {num_joints} rows of 'u v x y z', got shape {rows.shape}")
    return rows[:, :2], rows[:, 2:]


def load_dataset(root, layout: str, split: str = "train", *, load_depth: bool = True,
                 crop_size: int | None = None, palm_gamma: float = 1.0,
                 trace: AccessTrace | None = None) -> list[HandSample]:
    """Load every record of ``split`` in manifest order.

    A record whose depth file is listed but absent on disk loads with
    ``depth=None``; unreadable files raise :class:`RecordError`. With
    ``load_depth=False`` no depth file is opened at all.
    """
    manifest = read_manifest(root, layout)
    root = Path(root)
    num_joints = int(manifest.get("num_joints", 21))
    samples = []
    for rec in _records(manifest, split):
        rid = rec.get("id", "?")
        try:
            rgb_path = root / rec["rgb"]
            kp_path = root / rec["keypoints"]
            if trace is not None:
                trace.record("rgb", rid, rgb_path)
                trace.record("keypoints", rid, kp_path)
            rgb = read_rgb(rgb_path)
            kp2d, kp3d = _read_keypoints(kp_path, num_joints)
            intrinsics = CameraIntrinsics(**rec["intrinsics"])
            depth = None
            depth_file = rec.get("depth")
            if load_depth and depth_file and layout != "mhp_like":
                depth_path = root / depth_file
                if depth_path.exists():
                    if trace is not None:
                        trace.record("depth", rid, depth_path)
                    depth = DepthMap(read_depth16(depth_path), DepthUnit.RAW_MM)
        except RecordError:
            raise
        except Exception as exc:  # noqa: BLE001 - any failure names the record
            raise RecordError(rid, f"unreadable ({exc})") from exc

        if layout in PALM_ROOTED:
            kp3d, kp2d = palm_to_wrist(kp3d, kp2d, gamma=palm_gamma)
        bbox = tuple(rec["bbox"]) if rec.get("bbox") else None
        sample = HandSample(rgb=rgb, keypoints2d=kp2d, keypoints3d=kp3d, intrinsics=intrinsics,
                            depth=depth, hand_side=rec.get("hand_side", "right"),
                            source_id=str(rid), bbox=bbox)
        if crop_size is not None and bbox is not None:
            sample = crop_hand(sample, bbox, crop_size)
        samples.append(sample)
    return samples


def load_depth_pool(root, layout: str, split: str = "train", *,
                    trace: AccessTrace | None = None) -> DepthPool:
    """Real depth maps of a dataset, stripped of any pairing with RGB."""
    manifest = read_manifest(root, layout)
    root = Path(root)
    items = []
    for rec in _records(manifest, split):
        depth_file = rec.get("depth")
        if not depth_file or layout == "mhp_like":
            continue
        path = root / depth_file
        if not path.exists():
            continue
        if trace is not None:
            trace.record("pool_depth", rec.get("id", "?"), path)
        try:
            items.append(DepthMap(read_depth16(path), DepthUnit.RAW_MM))
        except Exception as exc:  # noqa: BLE001
            raise RecordError(rec.get("id", "?"), f"unreadable depth ({exc})") from exc
    return DepthPool(items=items, origin=str(root))


def write_dataset(samples, root, layout: str, *, splits=None, palm_gamma: float = 1.0) -> Path:
    """Write ``samples`` in the manifest layout (used by fixtures and converters)."""
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}")
    root = Path(root)
    try:
        for sub in ("rgb", "depth", "keypoints"):
            (root / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write dataset to {root}: {exc}") from exc
    splits = list(splits) if splits is not None else ["train"] * len(samples)
    records = []
    num_joints = None
    for sample, split in zip(samples, splits):
        rid = sample.source_id
        kp2d, kp3d = sample.keypoints2d, sample.keypoints3d
        num_joints = len(kp2d)
        if layout in PALM_ROOTED:
            kp3d, kp2d = wrist_to_palm(kp3d, kp2d, gamma=palm_gamma)
        rec = {
            "id": rid,
            "split": split,
            "rgb": f"rgb/{rid}.png",
            "depth": None,
            "keypoints": f"keypoints/{rid}.txt",
            "intrinsics": sample.intrinsics.as_dict(),
            "hand_side": sample.hand_side.value,
            "bbox": list(sample.bbox) if sample.bbox is not None else None,
        }
        write_rgb(root / rec["rgb"], sample.rgb)
        if sample.depth is not None and layout != "mhp_like":
            rec["depth"] = f"depth/{rid}.png"
            write_depth16(root / rec["depth"], sample.depth.values)
        rows = np.concatenate([kp2d, kp3d], axis=1)
        np.savetxt(root / rec["keypoints"], rows, fmt="%.6f")
        records.append(rec)
    manifest = {
        "format_version": FORMAT_VERSION,
        "layout": layout,
        "num_joints": num_joints or 21,
        "root_keypoint": "palm" if layout in PALM_ROOTED else "wrist",
        "records": records,
    }
    with open(root / MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return root
