"""Data ingestion: KITTI sequences, depth completion, synthetic scenes."""

from .base import CameraIntrinsics, FramePair
from .completion import (
    ClassicalFill,
    DepthCompletionError,
    ExternalCompletion,
    PrecomputedDepth,
    complete_depth,
    make_backend,
)
from .kitti import load_kitti_sequence, project_lidar
from .synthetic import SyntheticSceneConfig, generate_synthetic_sequence, rigid_flow

__all__ = [
    "CameraIntrinsics",
    "FramePair",
    "ClassicalFill",
    "DepthCompletionError",
    "ExternalCompletion",
    "PrecomputedDepth",
    "complete_depth",
    "make_backend",
    "load_kitti_sequence",
    "project_lidar",
    "SyntheticSceneConfig",
    "generate_synthetic_sequence",
    "rigid_flow",
]
