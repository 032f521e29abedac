"""Inference over sequences, trajectory accumulation, and metric emission."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch

from .checkpoint import load_checkpoint
from .config import RunConfig
from .evalkit import (
    DEFAULT_SEGMENT_LENGTHS,
    aggregate,
    plot_trajectory,
    segment_errors,
    write_kitti_trajectory,
    write_results_file,
)
from .geometry import Pose, Trajectory, accumulate
from .network import OdometryNet
from .posenet import fuse_poses
from .train import _depth_backend, build_loss, build_model, load_pairs, pair_inputs

__all__ = ["SequenceResult", "EvaluationResult", "predict_relative", "predict_trajectory", "run_evaluation"]


@dataclass
class SequenceResult:
    sequence: str
    t_rel: float | None
    r_rel: float | None
    status: str  # "ok" or "insufficient length"
    trajectory_path: Path
    plot_path: Path


@dataclass
class EvaluationResult:
    results_path: Path
    sequences: list


def predict_relative(model: OdometryNet, pair_tensors) -> Pose:
    """Fused relative pose for one prepared frame pair."""
    rgbd_a, rgbd_b, depth, valid = pair_tensors
    with torch.no_grad():
        out = model(rgbd_a, rgbd_b, depth, valid)
    return fuse_poses(out.estimates)


def predict_trajectory(model: OdometryNet, pairs, config: RunConfig, backend=None) -> Trajectory:
    model.eval()
    relatives = [predict_relative(model, pair_inputs(p, config, backend)) for p in pairs]
    return accumulate(relatives)


def run_evaluation(config: RunConfig, checkpoint_path, sequences=None, output_dir=None) -> EvaluationResult:
    """Evaluate a checkpoint over sequences; writes results, trajectories, plots."""
    out_dir = Path(output_dir if output_dir is not None else config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model = build_model(config)
    loss_module = build_loss(config)
    load_checkpoint(checkpoint_path, model, loss_module, config)
    backend = _depth_backend(config)
    lengths = config.eval_segment_lengths or DEFAULT_SEGMENT_LENGTHS

    if sequences is None:
        sequences = (
            list(config.dataset.sequences) if config.dataset.kind == "kitti" else ["synthetic"]
        )

    rows = []
    seq_results = []
    for seq in sequences:
        pairs = load_pairs(config, sequence=None if seq == "synthetic" else seq)
        gt = accumulate([p.gt_relative for p in pairs])
        pred = predict_trajectory(model, pairs, config, backend)

        traj_path = out_dir / f"trajectory_{seq}.txt"
        write_kitti_trajectory(traj_path, pred)
        plot_path, _ = plot_trajectory(gt, [("prediction", pred)], out_dir / f"plot_{seq}.png", lengths)

        errors = segment_errors(gt, pred, lengths)
        if errors:
            t_rel, r_rel = aggregate(errors)
            rows.append((seq, t_rel, r_rel))
            seq_results.append(SequenceResult(seq, t_rel, r_rel, "ok", traj_path, plot_path))
        else:
            seq_results.append(
                SequenceResult(seq, None, None, "insufficient length", traj_path, plot_path)
            )

    results_path = out_dir / "results.txt"
    if rows:
        write_results_file(results_path, rows)
    else:
        results_path.write_text(
            "".join(f"{s.sequence} insufficient_length\n" for s in seq_results)
        )
    return EvaluationResult(results_path=results_path, sequences=seq_results)
