"""Odometry metrics and visualization.

Implements the standard odometry benchmark protocol: for every start frame
(stride 1) and every segment length in 100..800 m, the segment's endpoint is
the first frame whose cumulative ground-truth path distance reaches start +
length (ties take the earlier frame; starts without enough remaining
distance are skipped).  The error pose is

    relative(relative(pred_s, pred_e), relative(gt_s, gt_e))

whose translation norm divided by the nominal length gives t_err and whose
rotation angle divided by the nominal length gives r_err.  Aggregation
reports the means as percent and degrees per 100 m.

Also provides KITTI 12-float trajectory file I/O, HSV flow rendering, and
top-down trajectory plots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, Trajectory, relative, rotation_angle

__all__ = [
    "DEFAULT_SEGMENT_LENGTHS",
    "SegmentError",
    "path_distances",
    "segment_errors",
    "aggregate",
    "flow_to_color",
    "plot_trajectory",
    "read_kitti_trajectory",
    "write_kitti_trajectory",
    "write_results_file",
]

DEFAULT_SEGMENT_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


@dataclass(frozen=True)
class SegmentError:
    start_frame: int
    length_m: float
    t_err: float  # dimensionless fraction of the segment length
    r_err: float  # radians per meter

    def __post_init__(self):
        if self.t_err < 0 or self.r_err < 0:
            raise ValueError("segment errors cannot be negative")


def path_distances(traj: Trajectory) -> np.ndarray:
    """Cumulative translation distance along the trajectory; d[0] = 0."""
    t = traj.translations()
    steps = np.linalg.norm(np.diff(t, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def _segment_end(distances: np.ndarray, start: int, length: float) -> int:
    """First frame at/after the target distance, or -1 if the path ends."""
    target = distances[start] + length
    idx = int(np.searchsorted(distances, target, side="left"))
    return idx if idx < len(distances) else -1


def segment_errors(gt: Trajectory, pred: Trajectory, lengths=DEFAULT_SEGMENT_LENGTHS):
    """Per-(start, length) relative errors over ground-truth-measured segments."""
    if gt.frame_count != pred.frame_count:
        raise ValueError(
            f"trajectory lengths differ: gt {gt.frame_count} vs pred {pred.frame_count}"
        )
    distances = path_distances(gt)
    errors = []
    for start in range(gt.frame_count):
        for length in lengths:
            end = _segment_end(distances, start, float(length))
            if end < 0:
                continue
            gt_motion = relative(gt[start], gt[end])
            pred_motion = relative(pred[start], pred[end])
            error_pose = relative(pred_motion, gt_motion)
            errors.append(
                SegmentError(
                    start_frame=start,
                    length_m=float(length),
                    t_err=float(np.linalg.norm(error_pose.t)) / float(length),
                    r_err=rotation_angle(error_pose) / float(length),
                )
            )
    return errors


def aggregate(errors) -> tuple[float, float]:
    """(t_rel percent, r_rel degrees per 100 m) means over segment errors."""
    errors = list(errors)
    if not errors:
        raise ValueError("cannot aggregate an empty error list")
    t_rel = float(np.mean([e.t_err for e in errors])) * 100.0
    r_rel = float(np.mean([e.r_err for e in errors])) * 180.0 / np.pi * 100.0
    return t_rel, r_rel


def flow_to_color(flow: np.ndarray, max_magnitude: float | None = None) -> np.ndarray:
    """HSV rendering of a (2, H, W) flow field as (H, W, 3) uint8.

    Hue follows the flow direction (rightward = red, downward rotates
    through green, leftward = cyan-blue); saturation and value both scale
    with magnitude, so zero flow is achromatic black.
    """
    from matplotlib.colors import hsv_to_rgb

    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError(f"flow must be (2, H, W), got {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow contains non-finite values")
    ux, uy = flow[0], flow[1]
    magnitude = np.hypot(ux, uy)
    if max_magnitude is None:
        max_magnitude = max(float(magnitude.max()), 1e-9)
    scaled = np.clip(magnitude / max_magnitude, 0.0, 1.0)
    hue = (np.arctan2(uy, ux) / (2.0 * np.pi)) % 1.0
    hsv = np.stack([hue, scaled, scaled], axis=-1)
    return (hsv_to_rgb(hsv) * 255.0).round().astype(np.uint8)


def read_kitti_trajectory(path) -> Trajectory:
    """Trajectory from a KITTI 12-float-per-line pose file."""
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
    return Trajectory(tuple(poses))


def write_kitti_trajectory(path, traj: Trajectory):
    with open(path, "w") as f:
        for pose in traj:
            row = pose.matrix()[:3].reshape(-1)
            f.write(" ".join(f"{v:.9e}" for v in row) + "\n")


def write_results_file(path, rows):
    """One ``<id> <t_rel> <r_rel>`` line per sequence plus a mean row."""
    rows = list(rows)
    if not rows:
        raise ValueError("no result rows to write")
    with open(path, "w") as f:
        for seq_id, t_rel, r_rel in rows:
            f.write(f"{seq_id} {t_rel:.6f} {r_rel:.6f}\n")
        mean_t = float(np.mean([r[1] for r in rows]))
        mean_r = float(np.mean([r[2] for r in rows]))
        f.write(f"mean {mean_t:.6f} {mean_r:.6f}\n")


def plot_trajectory(gt: Trajectory, predictions, output_path, lengths=DEFAULT_SEGMENT_LENGTHS):
    """Top-down (x, z) plot plus a plain-text metric table.

    ``predictions`` is a list of (name, Trajectory).  The figure goes to
    ``output_path``; the table of per-prediction (t_rel, r_rel) goes to the
    same path with a ``.txt`` suffix.  Output bytes are stable for fixed
    inputs.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from pathlib import Path

    output_path = Path(output_path)
    fig, ax = plt.subplots(figsize=(6, 6))
    gt_t = gt.translations()
    ax.plot(gt_t[:, 0], gt_t[:, 2], "k-", linewidth=1.5, label="ground truth")
    for name, traj in predictions:
        t = traj.translations()
        ax.plot(t[:, 0], t[:, 2], linewidth=1.2, label=name)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    fig.savefig(output_path, dpi=120, metadata={"Software": "densevo"})
    plt.close(fig)

    lines = ["name t_rel[%] r_rel[deg/100m]"]
    for name, traj in predictions:
        errors = segment_errors(gt, traj, lengths)
        if errors:
            t_rel, r_rel = aggregate(errors)
            lines.append(f"{name} {t_rel:.6f} {r_rel:.6f}")
        else:
            lines.append(f"{name} insufficient_length insufficient_length")
    table_path = output_path.with_suffix(".txt")
    table_path.write_text("\n".join(lines) + "\n")
    return output_path, table_path
