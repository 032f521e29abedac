"""Training loop: deterministic single-worker optimization of the pose loss.

One iteration processes one frame pair.  Pair order reshuffles every epoch
from the run seed, dropout draws from an explicit generator, and the loss
log is written with fixed formatting, so identical seeds reproduce identical
logs byte for byte.  Training aborts on a non-finite loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import ClassicalFill, PrecomputedDepth, complete_depth, generate_synthetic_sequence
from .data.base import FramePair
from .data.kitti import load_kitti_sequence
from .flow import DepthMap, inverse_depth
from .loss import ScaleAwarePoseLoss
from .network import OdometryNet

__all__ = [
    "TrainingDivergedError",
    "TrainResult",
    "build_model",
    "build_loss",
    "load_pairs",
    "pair_inputs",
    "run_training",
]


class TrainingDivergedError(RuntimeError):
    """The training loss became non-finite."""


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    log_lines: list
    final_loss: float
    iterations: int


def build_model(config: RunConfig) -> OdometryNet:
    return OdometryNet(
        widths=config.model.channel_widths,
        search_radius=config.model.search_radius,
        cross_attention_levels=config.model.cross_attention_levels,
        dropout=config.model.dropout,
    )


def build_loss(config: RunConfig) -> ScaleAwarePoseLoss:
    return ScaleAwarePoseLoss(
        alpha=config.loss.alpha,
        s_t_init=config.loss.s_t_init,
        s_q_init=config.loss.s_q_init,
    )


def _depth_backend(config: RunConfig):
    if config.depth_backend == "classical":
        return ClassicalFill()
    if config.depth_backend == "precomputed":
        return PrecomputedDepth(config.precomputed_depth_dir)
    return None


def load_pairs(config: RunConfig, sequence: str | None = None) -> list[FramePair]:
    """Materialize the frame pairs one training/evaluation run consumes."""
    if config.dataset.kind == "synthetic":
        return generate_synthetic_sequence(config.dataset.synthetic, config.seed)
    sequences = [sequence] if sequence is not None else list(config.dataset.sequences)
    pairs = []
    for seq in sequences:
        pairs.extend(load_kitti_sequence(config.dataset.kitti_root, seq))
    return pairs


def _frame_depth(pair: FramePair, which: str, config: RunConfig, backend) -> DepthMap:
    sparse = pair.sparse_depth_a if which == "a" else pair.sparse_depth_b
    dense = pair.dense_depth_a if which == "a" else pair.dense_depth_b
    mode = config.model.input_mode
    if mode == "rgb_only":
        return DepthMap.empty(pair.height, pair.width)
    if mode == "rgbd_sparse":
        return sparse
    if config.depth_backend == "exact":
        if dense is None:
            raise ValueError("depth_backend 'exact' needs dense ground-truth depth on the pair")
        return dense
    if backend is None:
        raise ValueError(f"depth_backend {config.depth_backend!r} cannot produce dense depth")
    rgb = pair.rgb_a if which == "a" else pair.rgb_b
    frame_index = pair.index if which == "a" else pair.index + 1
    return complete_depth(sparse, rgb, backend, frame_index=frame_index)


def pair_inputs(pair: FramePair, config: RunConfig, backend=None, dtype=torch.float32):
    """Network inputs for one pair: two RGB-D stacks plus frame-a depth.

    The depth channel and the modulation input both use inverse depth
    (1/meters, zero where invalid), which keeps the channel bounded across
    desk and driving scales.
    """
    depth_a = _frame_depth(pair, "a", config, backend)
    depth_b = _frame_depth(pair, "b", config, backend)

    def stack(rgb: np.ndarray, depth_map: DepthMap) -> torch.Tensor:
        d, v = depth_map.tensors(torch.float64)
        inv = inverse_depth(d, v)[0]
        rgbd = torch.cat([torch.from_numpy(rgb.copy()), inv], dim=0)
        return rgbd[None].to(dtype)

    d_a, v_a = depth_a.tensors(dtype)
    return stack(pair.rgb_a, depth_a), stack(pair.rgb_b, depth_b), d_a, v_a


def run_training(config: RunConfig, output_dir=None) -> TrainResult:
    """Optimize the network on the configured pairs; returns artifact paths."""
    out_dir = Path(output_dir if output_dir is not None else config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(config.seed)
    model = build_model(config)
    loss_module = build_loss(config)
    backend = _depth_backend(config)

    pairs = load_pairs(config)
    if not pairs:
        raise ValueError("the dataset produced no frame pairs")
    inputs = [pair_inputs(p, config, backend) for p in pairs]
    targets = [p.gt_relative for p in pairs]
    if any(t is None for t in targets):
        raise ValueError("training requires ground-truth relative poses on every pair")

    params = list(model.parameters()) + list(loss_module.parameters())
    optimizer = torch.optim.Adam(params, lr=config.optim.learning_rate)
    scheduler = None
    if config.optim.schedule == "cosine" and config.optim.iterations > 0:
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            optimizer, T_max=config.optim.iterations
        )
    dropout_generator = torch.Generator().manual_seed(config.seed + 1)
    order_rng = np.random.default_rng(config.seed + 2)

    model.train()
    log_lines = []
    final_loss = float("nan")
    order = []
    for step in range(config.optim.iterations):
        if not order:
            order = list(order_rng.permutation(len(pairs)))
        idx = order.pop(0)
        rgbd_a, rgbd_b, depth, valid = inputs[idx]
        out = model(rgbd_a, rgbd_b, depth, valid, generator=dropout_generator)
        loss = loss_module.total_loss(out.estimates, targets[idx])
        value = float(loss.detach())
        if not np.isfinite(value):
            raise TrainingDivergedError(
                f"non-finite loss {value} at iteration {step} (pair {pairs[idx].index})"
            )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if scheduler is not None:
            scheduler.step()
        final_loss = value
        if step % config.optim.log_every == 0 or step == config.optim.iterations - 1:
            lr = optimizer.param_groups[0]["lr"]
            log_lines.append(f"{step:06d} {value:.9e} {lr:.6e}")

    log_path = out_dir / "train_log.txt"
    log_path.write_text("\n".join(log_lines) + ("\n" if log_lines else ""))
    checkpoint_path = out_dir / "checkpoint.pt"
    save_checkpoint(checkpoint_path, model, loss_module, config, step=config.optim.iterations)
    return TrainResult(
        checkpoint_path=checkpoint_path,
        log_path=log_path,
        log_lines=log_lines,
        final_loss=final_loss,
        iterations=config.optim.iterations,
    )
