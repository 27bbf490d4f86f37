"""Dataset records, preprocessing and fixture generation."""

from .fixtures import gen_fixtures, render_fixtures
from .io import AccessTrace, load_dataset, load_depth_pool, read_manifest, write_dataset
from .preprocess import (
    bone_length,
    compose_bboxes,
    crop_hand,
    image_to_heatmap_coords,
    make_heatmap_targets,
    normalize_depth,
    palm_to_wrist,
    relative_depths,
    sample_unpaired_depth,
    wrist_to_palm,
)
from .types import (
    JOINT_NAMES,
    MIDDLE_MCP,
    NUM_JOINTS,
    PARENTS,
    WRIST,
    CameraIntrinsics,
    DepthMap,
    DepthPool,
    DepthUnit,
    HandSample,
    HandSide,
    HeatmapTargets,
)
