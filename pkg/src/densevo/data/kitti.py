"""KITTI odometry ingestion and LiDAR-to-image projection.

Expected directory layout::

    root/
      sequences/NN/image_2/000000.png ...
      sequences/NN/velodyne/000000.bin ...   (optional)
      sequences/NN/calib.txt
      poses/NN.txt

Pose files carry one 12-float row-major 3x4 camera-to-world matrix per
line.  Velodyne scans are little-endian float32 quadruples (x, y, z,
reflectance).  Depth PNGs follow the depth-completion benchmark encoding:
16-bit, meters = value / 256, 0 = invalid.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

from ..flow import DepthMap
from ..geometry import Pose, relative
from .base import CameraIntrinsics, FramePair

__all__ = [
    "parse_calib_file",
    "load_poses",
    "read_velodyne",
    "read_depth_png",
    "write_depth_png",
    "project_lidar",
    "crop_and_scale",
    "load_kitti_sequence",
    "DATA_ROOT_ENV",
]

DATA_ROOT_ENV = "DENSEVO_DATA_ROOT"


def parse_calib_file(path) -> dict:
    """Parse ``key: v0 v1 ...`` calibration lines into named float arrays."""
    entries = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if ":" not in line:
                raise ValueError(f"{path}:{lineno}: missing ':' separator")
            key, _, rest = line.partition(":")
            try:
                entries[key.strip()] = np.array([float(v) for v in rest.split()])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad calibration value") from exc
    return entries


def load_poses(path) -> list[Pose]:
    """Read a KITTI pose file (12 floats per line, row-major 3x4)."""
    poses = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) != 12:
                raise ValueError(f"{path}:{lineno}: expected 12 values, got {len(vals)}")
            poses.append(Pose.from_matrix(np.array(vals)))
    if not poses:
        raise ValueError(f"{path}: no poses found")
    return poses


def read_velodyne(path) -> np.ndarray:
    """(N, 4) float32 LiDAR points: x, y, z, reflectance."""
    scan = np.fromfile(path, dtype=np.float32)
    if scan.size % 4:
        raise ValueError(f"{path}: size {scan.size} is not a multiple of 4")
    return scan.reshape(-1, 4)


def read_depth_png(path) -> DepthMap:
    raw = np.asarray(Image.open(path), dtype=np.float64)
    depth = raw / 256.0
    return DepthMap(depth, raw > 0)


def write_depth_png(path, depth_map: DepthMap):
    raw = np.where(depth_map.valid, np.round(depth_map.depth * 256.0), 0.0)
    Image.fromarray(np.clip(raw, 0, 65535).astype(np.uint16)).save(path)


def project_lidar(points: np.ndarray, cam_from_lidar: np.ndarray, intrinsics: CameraIntrinsics) -> DepthMap:
    """Z-buffered pinhole projection of LiDAR points into the image.

    ``cam_from_lidar`` is the 4x4 transform into the rectified camera frame.
    The nearest point wins per pixel; untouched pixels come out invalid.
    Points behind the camera are culled; no points at all is not an error.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] < 3:
        raise ValueError(f"points must be (N, >=3), got {points.shape}")
    cam = points[:, :3] @ cam_from_lidar[:3, :3].T + cam_from_lidar[:3, 3]
    z = cam[:, 2]
    front = z > 1e-9
    cam, z = cam[front], z[front]
    u = np.rint(intrinsics.fx * cam[:, 0] / z + intrinsics.cx).astype(np.int64)
    v = np.rint(intrinsics.fy * cam[:, 1] / z + intrinsics.cy).astype(np.int64)
    inside = (u >= 0) & (u < intrinsics.width) & (v >= 0) & (v < intrinsics.height)
    u, v, z = u[inside], v[inside], z[inside]
    depth = np.full((intrinsics.height, intrinsics.width), np.inf)
    np.minimum.at(depth, (v, u), z)
    valid = np.isfinite(depth)
    return DepthMap(np.where(valid, depth, 0.0), valid)


def crop_and_scale(image: np.ndarray, intrinsics: CameraIntrinsics, target_hw=(352, 1216)):
    """Bottom-center crop toward the target size, scaling only if needed.

    Real KITTI frames contain the 1216x352 window, so they are cropped
    outright (the depth-completion convention: the sky band at the top goes
    first).  Smaller inputs get the largest bottom-center crop with the
    target aspect, then a bilinear resize.
    Returns ``(image, adjusted intrinsics)``; image stays (3, H, W).
    """
    th, tw = target_hw
    h, w = image.shape[1:]
    if h >= th and w >= tw:
        crop_h, crop_w = th, tw
    else:
        aspect = tw / th
        crop_w = min(w, int(np.floor(h * aspect)))
        crop_h = min(h, int(np.floor(crop_w / aspect)))
        crop_w = int(np.floor(crop_h * aspect))
    x0 = (w - crop_w) // 2
    y0 = h - crop_h
    cropped = image[:, y0 : y0 + crop_h, x0 : x0 + crop_w]
    adjusted = intrinsics.cropped(x0, y0, crop_w, crop_h)
    if (crop_h, crop_w) != (th, tw):
        pil = Image.fromarray(np.clip(cropped.transpose(1, 2, 0) * 255.0, 0, 255).astype(np.uint8))
        pil = pil.resize((tw, th), Image.BILINEAR)
        cropped = np.asarray(pil, dtype=np.float64).transpose(2, 0, 1) / 255.0
        adjusted = adjusted.scaled(tw / crop_w, th / crop_h)
        adjusted = CameraIntrinsics(adjusted.fx, adjusted.fy, adjusted.cx, adjusted.cy, tw, th)
    return np.ascontiguousarray(cropped), adjusted


def _read_rgb(path) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 255.0


def _cam2_from_lidar(calib: dict) -> tuple[np.ndarray, CameraIntrinsics | None]:
    if "Tr" not in calib or "P2" not in calib:
        raise ValueError("calibration must provide Tr and P2 entries")
    p2 = calib["P2"].reshape(3, 4)
    tr = np.eye(4)
    tr[:3, :] = calib["Tr"].reshape(3, 4)
    k = p2[:, :3]
    # P2 = K [I | t]: the cam2 offset in the rectified frame is K^-1 p2[:, 3]
    offset = np.linalg.solve(k, p2[:, 3])
    cam2 = np.eye(4)
    cam2[:3, 3] = offset
    return cam2 @ tr, k


def load_kitti_sequence(
    root,
    sequence: str,
    target_hw=(352, 1216),
    with_lidar: bool = True,
    depth_dir=None,
):
    """Yield consecutive-frame pairs for one odometry sequence.

    ``root`` may be overridden by the ``DENSEVO_DATA_ROOT`` environment
    variable.  A sequence with N pose lines yields N - 1 pairs, each with
    the ground-truth relative pose and (when LiDAR or ``depth_dir`` is
    available) a sparse depth map per frame.
    """
    root = Path(os.environ.get(DATA_ROOT_ENV, "") or root)
    seq_dir = root / "sequences" / sequence
    pose_file = root / "poses" / f"{sequence}.txt"
    if not seq_dir.is_dir():
        raise FileNotFoundError(f"missing sequence directory {seq_dir}")
    if not pose_file.is_file():
        raise FileNotFoundError(f"missing pose file {pose_file}")
    poses = load_poses(pose_file)
    calib = parse_calib_file(seq_dir / "calib.txt")
    cam_from_lidar, k = _cam2_from_lidar(calib)
    depth_dir = None if depth_dir is None else Path(depth_dir)

    def load_frame(idx: int):
        rgb = _read_rgb(seq_dir / "image_2" / f"{idx:06d}.png")
        h, w = rgb.shape[1:]
        intrinsics = CameraIntrinsics(k[0, 0], k[1, 1], k[0, 2], k[1, 2], w, h)
        rgb, intrinsics = crop_and_scale(rgb, intrinsics, target_hw)
        if depth_dir is not None:
            sparse = read_depth_png(depth_dir / f"{idx:06d}.png")
            if sparse.shape != tuple(target_hw):
                raise ValueError(
                    f"precomputed depth {sparse.shape} does not match target {tuple(target_hw)}"
                )
        elif with_lidar:
            scan = read_velodyne(seq_dir / "velodyne" / f"{idx:06d}.bin")
            sparse = project_lidar(scan[:, :3], cam_from_lidar, intrinsics)
        else:
            sparse = DepthMap.empty(*target_hw)
        return rgb, sparse, intrinsics

    prev = load_frame(0)
    for i in range(len(poses) - 1):
        cur = load_frame(i + 1)
        yield FramePair(
            rgb_a=prev[0],
            rgb_b=cur[0],
            sparse_depth_a=prev[1],
            sparse_depth_b=cur[1],
            intrinsics=prev[2],
            gt_relative=relative(poses[i], poses[i + 1]),
            index=i,
        )
        prev = cur
