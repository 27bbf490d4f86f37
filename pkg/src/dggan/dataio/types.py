from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

# 21-joint hand: wrist, then (MCP, PIP, DIP, TIP) per finger, thumb first.
FINGERS = ("thumb", "index", "middle", "ring", "pinky")
JOINT_NAMES = ("wrist",) + tuple(
    f"{finger}_{part}" for finger in FINGERS for part in ("mcp", "pip", "dip", "tip")
)
NUM_JOINTS = len(JOINT_NAMES)
PARENTS = (-1,) + tuple(0 if i % 4 == 1 else i - 1 for i in range(1, NUM_JOINTS))
WRIST = 0
MIDDLE_MCP = JOINT_NAMES.index("middle_mcp")


class DepthUnit(str, Enum):
    RAW_MM = "raw_mm"
    NORMALIZED = "normalized"


class HandSide(str, Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def project(self, points3d: np.ndarray) -> np.ndarray:
        """Pinhole projection of ``(..., 3)`` camera-frame points to pixels."""
        points3d = np.asarray(points3d, dtype=np.float64)
        z = points3d[..., 2]
        u = self.fx * points3d[..., 0] / z + self.cx
        v = self.fy * points3d[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1)

    def as_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


@dataclass
class DepthMap:
    values: np.ndarray
    unit: DepthUnit = DepthUnit.RAW_MM

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.unit = DepthUnit(self.unit)
        if self.values.ndim != 2:
            raise ValueError(f"depth map must be 2-D, got shape {self.values.shape}")


@dataclass
class HandSample:
    """One annotated record.

    ``rgb`` is H x W x 3 in [0, 1]. Keypoints are continuous ``(u, v)``
    image coordinates: pixel ``(row i, col j)`` covers ``[j, j + 1) x [i, i + 1)``,
    so its center sits at ``(j + 0.5, i + 0.5)``.
    """

    rgb: np.ndarray
    keypoints2d: np.ndarray
    keypoints3d: np.ndarray
    intrinsics: CameraIntrinsics
    depth: DepthMap | None = None
    hand_side: HandSide = HandSide.RIGHT
    source_id: str = ""
    bbox: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        self.keypoints2d = np.asarray(self.keypoints2d, dtype=np.float64)
        self.keypoints3d = np.asarray(self.keypoints3d, dtype=np.float64)
        self.hand_side = HandSide(self.hand_side)

    @property
    def num_joints(self) -> int:
        return self.keypoints2d.shape[0]

    def replace(self, **changes) -> "HandSample":
        return replace(self, **changes)


@dataclass
class HeatmapTargets:
    maps: np.ndarray
    sigma: float


@dataclass
class DepthPool:
    items: list[DepthMap] = field(default_factory=list)
    origin: str = ""

    def __len__(self):
        return len(self.items)
