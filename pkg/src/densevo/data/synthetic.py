"""Synthetic pinhole scenes with exact depth, poses, and induced flow.

A scene is a closed textured room (six axis-aligned planes) plus a few boxes
resting on the floor, ray-cast through an ideal pinhole camera.  Every pixel
therefore carries exact metric depth, every frame pair carries an exact
relative pose, and :func:`rigid_flow` derives the exact optical flow the pair
induces.  All randomness (camera speed profile, box layout, sparse-depth
masks) flows from one seed, so identical seeds reproduce identical streams
bit for bit.

Camera convention: x right, y down, z forward; poses are camera-to-world.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..flow import DepthMap
from ..geometry import Pose, relative
from .base import CameraIntrinsics, FramePair

__all__ = [
    "SyntheticSceneConfig",
    "generate_synthetic_sequence",
    "render_frame",
    "camera_path",
    "rigid_flow",
]


@dataclass
class SyntheticSceneConfig:
    """Key-value schema for the synthetic generator.

    path_kind: ``forward`` (translation-dominant drive toward the back
    wall), ``lateral`` (pure x translation), ``static`` (no motion), or
    ``custom`` (poses supplied explicitly).
    layout: ``room`` (closed room with boxes) or ``wall`` (a single
    fronto-parallel plane at ``wall_distance``, the analytic-flow scene).
    """

    width: int = 128
    height: int = 64
    frame_count: int = 20
    focal: float = 100.0
    path_kind: str = "forward"
    layout: str = "room"
    base_speed: float = 0.15
    speed_jitter: float = 0.6
    yaw_jitter_deg: float = 0.3
    lateral_jitter: float = 0.1
    wall_distance: float = 7.0
    room_half_width: float = 5.0
    floor_y: float = 1.2
    ceiling_y: float = -2.5
    box_count: int = 4
    texture_scale: float = 1.1
    sparse_fraction: float = 0.05
    custom_poses: tuple = field(default=())

    def __post_init__(self):
        if self.width % 16 or self.height % 16:
            raise ValueError(f"image size {self.width}x{self.height} must be divisible by 16")
        if self.frame_count < 2 and self.path_kind != "custom":
            raise ValueError("a sequence needs at least two frames")
        if self.path_kind not in ("forward", "lateral", "static", "custom"):
            raise ValueError(f"unknown path kind {self.path_kind!r}")
        if self.layout not in ("room", "wall"):
            raise ValueError(f"unknown layout {self.layout!r}")

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(
            fx=self.focal,
            fy=self.focal,
            cx=(self.width - 1) / 2.0,
            cy=(self.height - 1) / 2.0,
            width=self.width,
            height=self.height,
        )


# fixed texture basis: three octaves with incommensurate frequencies and a
# distinct projection direction each, evaluated on world coordinates
_TEX_FREQS = (1.0, 2.6, 6.3)
_TEX_WEIGHTS = (0.5, 0.3, 0.2)
_TEX_DIRS = (
    np.array([0.9, 0.2, 0.4]),
    np.array([-0.3, 1.0, 0.6]),
    np.array([0.5, -0.7, 1.1]),
)
_CHANNEL_PHASES = (0.0, 2.1, 4.2)


def _texture(points: np.ndarray, tint: np.ndarray, scale: float) -> np.ndarray:
    """Procedural RGB in [0, 1] from world coordinates; (N, 3)."""
    colors = np.zeros((points.shape[0], 3))
    for ch, phase in enumerate(_CHANNEL_PHASES):
        value = np.zeros(points.shape[0])
        for freq, weight, direction in zip(_TEX_FREQS, _TEX_WEIGHTS, _TEX_DIRS):
            proj = points @ direction
            value += weight * np.sin(2.0 * np.pi * freq * scale * proj + phase + ch)
        colors[:, ch] = 0.5 + 0.5 * value * tint[ch]
    return np.clip(colors, 0.0, 1.0)


class _Plane:
    def __init__(self, point, normal, tint):
        self.point = np.asarray(point, dtype=np.float64)
        normal = np.asarray(normal, dtype=np.float64)
        self.normal = normal / np.linalg.norm(normal)
        self.tint = np.asarray(tint, dtype=np.float64)

    def intersect(self, origins, dirs):
        denom = dirs @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.point - origins) @ self.normal) / denom
        t = np.where(np.abs(denom) > 1e-12, t, np.inf)
        return np.where(t > 1e-9, t, np.inf)


class _Box:
    def __init__(self, lo, hi, tint):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        self.tint = np.asarray(tint, dtype=np.float64)

    def intersect(self, origins, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = (self.lo - origins) / dirs
            t_hi = (self.hi - origins) / dirs
        near = np.minimum(t_lo, t_hi).max(axis=1)
        far = np.maximum(t_lo, t_hi).min(axis=1)
        hit = (near <= far) & (near > 1e-9)
        return np.where(hit, near, np.inf)


def _build_scene(config: SyntheticSceneConfig, rng: np.random.Generator):
    back = _Plane([0, 0, config.wall_distance], [0, 0, -1], [1.0, 0.9, 0.8])
    if config.layout == "wall":
        return [back]
    half = config.room_half_width
    scene = [
        back,
        _Plane([0, config.floor_y, 0], [0, -1, 0], [0.8, 1.0, 0.7]),
        _Plane([0, config.ceiling_y, 0], [0, 1, 0], [0.7, 0.8, 1.0]),
        _Plane([-half, 0, 0], [1, 0, 0], [1.0, 0.7, 1.0]),
        _Plane([half, 0, 0], [-1, 0, 0], [0.7, 1.0, 1.0]),
        _Plane([0, 0, -2.0], [0, 0, 1], [0.9, 0.9, 0.9]),
    ]
    for _ in range(config.box_count):
        cx = rng.uniform(-0.6 * half, 0.6 * half)
        cz = rng.uniform(0.35 * config.wall_distance, 0.9 * config.wall_distance)
        sx, sy, sz = rng.uniform(0.25, 0.8, size=3)
        lo = [cx - sx / 2, config.floor_y - sy, cz - sz / 2]
        hi = [cx + sx / 2, config.floor_y, cz + sz / 2]
        scene.append(_Box(lo, hi, rng.uniform(0.6, 1.0, size=3)))
    return scene


def camera_path(config: SyntheticSceneConfig, rng: np.random.Generator) -> list[Pose]:
    """Camera-to-world poses along the configured path."""
    if config.path_kind == "custom":
        poses = list(config.custom_poses)
        if len(poses) < 2:
            raise ValueError("custom path needs at least two poses")
        return poses
    if config.path_kind == "static":
        return [Pose.identity() for _ in range(config.frame_count)]

    poses = []
    position = np.zeros(3)
    yaw = 0.0
    for i in range(config.frame_count):
        q = np.array([np.cos(yaw / 2), 0.0, np.sin(yaw / 2), 0.0])
        poses.append(Pose(q, position.copy()))
        speed = config.base_speed * (1.0 + config.speed_jitter * rng.uniform(-1.0, 1.0))
        if config.path_kind == "lateral":
            step = np.array([speed, 0.0, 0.0])
        else:
            wiggle = config.lateral_jitter * speed
            step = np.array(
                [rng.uniform(-wiggle, wiggle), rng.uniform(-wiggle, wiggle) * 0.5, speed]
            )
            yaw += np.deg2rad(config.yaw_jitter_deg) * rng.uniform(-1.0, 1.0)
        position = position + step
    return poses


def render_frame(config: SyntheticSceneConfig, scene, pose: Pose):
    """Ray-cast one frame; returns (rgb (3, H, W), depth (H, W))."""
    cam = config.intrinsics()
    h, w = config.height, config.width
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    # rays with unit z in camera coords: the ray parameter equals z-depth
    dirs_cam = np.stack(
        [(us - cam.cx) / cam.fx, (vs - cam.cy) / cam.fy, np.ones_like(us)], axis=-1
    ).reshape(-1, 3)
    rotation = pose.rotation()
    dirs = dirs_cam @ rotation.T
    origins = np.broadcast_to(pose.t, dirs.shape)

    depth = np.full(dirs.shape[0], np.inf)
    owner = np.full(dirs.shape[0], -1)
    for idx, prim in enumerate(scene):
        t = prim.intersect(origins, dirs)
        closer = t < depth
        depth = np.where(closer, t, depth)
        owner = np.where(closer, idx, owner)
    if not np.all(np.isfinite(depth)):
        raise RuntimeError("a ray escaped the scene; the layout must be closed")

    points = origins + depth[:, None] * dirs
    rgb = np.zeros((dirs.shape[0], 3))
    for idx, prim in enumerate(scene):
        mask = owner == idx
        if mask.any():
            rgb[mask] = _texture(points[mask], prim.tint, config.texture_scale)
    return rgb.T.reshape(3, h, w).copy(), depth.reshape(h, w).copy()


def generate_synthetic_sequence(config: SyntheticSceneConfig, seed: int) -> list[FramePair]:
    """Render the configured sequence into consecutive frame pairs.

    Each pair carries the rendered images, a randomly subsampled sparse
    depth map, the exact dense depth, and the exact relative pose.
    """
    rng = np.random.default_rng(seed)
    scene = _build_scene(config, rng)
    poses = camera_path(config, rng)
    cam = config.intrinsics()

    frames = []
    for pose in poses:
        rgb, depth = render_frame(config, scene, pose)
        mask = rng.random(depth.shape) < config.sparse_fraction
        frames.append(
            (
                rgb,
                DepthMap(np.where(mask, depth, 0.0), mask),
                DepthMap.dense(depth),
            )
        )

    pairs = []
    for i in range(len(poses) - 1):
        rgb_a, sparse_a, dense_a = frames[i]
        rgb_b, sparse_b, dense_b = frames[i + 1]
        pairs.append(
            FramePair(
                rgb_a=rgb_a,
                rgb_b=rgb_b,
                sparse_depth_a=sparse_a,
                sparse_depth_b=sparse_b,
                dense_depth_a=dense_a,
                dense_depth_b=dense_b,
                intrinsics=cam,
                gt_relative=relative(poses[i], poses[i + 1]),
                index=i,
            )
        )
    return pairs


def rigid_flow(depth: DepthMap, pair_relative: Pose, intrinsics: CameraIntrinsics):
    """Exact flow induced by a rigid scene and a known relative pose.

    ``pair_relative`` maps frame-b camera coordinates into frame a (the
    convention of :class:`FramePair.gt_relative`).  Returns ``(flow (2, H,
    W), valid (H, W))``; pixels without depth, or whose reprojection falls
    behind the camera, are invalid.
    """
    h, w = depth.shape
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    z = depth.depth
    x = (us - intrinsics.cx) / intrinsics.fx * z
    y = (vs - intrinsics.cy) / intrinsics.fy * z
    pts_a = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    pts_b = pair_relative.inverse().apply(pts_a)
    zb = pts_b[:, 2].reshape(h, w)
    with np.errstate(divide="ignore", invalid="ignore"):
        ub = intrinsics.fx * pts_b[:, 0].reshape(h, w) / zb + intrinsics.cx
        vb = intrinsics.fy * pts_b[:, 1].reshape(h, w) / zb + intrinsics.cy
    valid = depth.valid & (zb > 1e-9)
    flow = np.stack([np.where(valid, ub - us, 0.0), np.where(valid, vb - vs, 0.0)])
    return flow, valid
