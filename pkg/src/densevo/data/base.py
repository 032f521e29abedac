"""Shared data-layer types: camera intrinsics and frame pairs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..flow import DepthMap
from ..geometry import Pose

__all__ = ["CameraIntrinsics", "FramePair"]


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive: fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def cropped(self, x0: int, y0: int, width: int, height: int) -> "CameraIntrinsics":
        return CameraIntrinsics(self.fx, self.fy, self.cx - x0, self.cy - y0, width, height)

    def scaled(self, sx: float, sy: float) -> "CameraIntrinsics":
        return CameraIntrinsics(
            self.fx * sx,
            self.fy * sy,
            self.cx * sx,
            self.cy * sy,
            int(round(self.width * sx)),
            int(round(self.height * sy)),
        )


@dataclass
class FramePair:
    """Two consecutive frames: the unit of training and inference.

    Images are float arrays of shape (3, H, W) in [0, 1].  Depth maps are
    aligned to the images.  ``gt_relative`` maps frame-b camera coordinates
    into frame a (``compose(pose_a, gt_relative) == pose_b``); it is None
    for unlabeled data, as are the dense depth maps until a completion
    backend fills them in.
    """

    rgb_a: np.ndarray
    rgb_b: np.ndarray
    sparse_depth_a: DepthMap
    sparse_depth_b: DepthMap
    intrinsics: CameraIntrinsics
    dense_depth_a: DepthMap | None = None
    dense_depth_b: DepthMap | None = None
    gt_relative: Pose | None = None
    index: int = 0

    def __post_init__(self):
        shapes = {self.rgb_a.shape, self.rgb_b.shape}
        if len(shapes) != 1 or self.rgb_a.ndim != 3 or self.rgb_a.shape[0] != 3:
            raise ValueError(f"images must share one (3, H, W) shape, got {shapes}")
        h, w = self.rgb_a.shape[1:]
        if h % 16 or w % 16:
            raise ValueError(f"frame size {w}x{h} must be divisible by 16")
        for dm in (self.sparse_depth_a, self.sparse_depth_b):
            if dm.shape != (h, w):
                raise ValueError(f"depth shape {dm.shape} does not match image {h}x{w}")

    @property
    def height(self) -> int:
        return self.rgb_a.shape[1]

    @property
    def width(self) -> int:
        return self.rgb_a.shape[2]
