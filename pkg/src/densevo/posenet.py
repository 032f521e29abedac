"""Hierarchical depth-aware pose refinement.

Poses travel through the network as a 7-vector: translation (3,) plus
quaternion (4,) scalar-first.  Residual updates are additive in that
parameter space, followed by quaternion renormalization with the w >= 0 sign
convention; the final estimate fuses all per-level poses with
softmax-normalized confidence weights.

Per-level heads pool the flow and depth features globally, concatenate the
incoming pose 7-vector, and regress the residual through a (256, 128, 64)
MLP whose output layer starts at zero, so an untrained network predicts the
identity motion at every level.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import geometry

__all__ = [
    "DegenerateUpdateError",
    "PoseEstimate",
    "identity_pose_tensors",
    "apply_residual",
    "fusion_weights",
    "fuse_pose_tensors",
    "fuse_poses",
    "ResidualPoseHead",
    "HierarchicalPoseEstimator",
]


class DegenerateUpdateError(ValueError):
    """A residual update drove the quaternion norm to (near) zero."""


def _canonicalize(q: torch.Tensor) -> torch.Tensor:
    """Unit-normalize and flip sign so the scalar part is nonnegative."""
    q = q / torch.linalg.vector_norm(q)
    sign = torch.where(q[0] >= 0, q.new_tensor(1.0), q.new_tensor(-1.0))
    return q * sign


@dataclass(frozen=True)
class PoseEstimate:
    """Pose hypothesis at one pyramid level, kept as differentiable tensors."""

    t: torch.Tensor
    q: torch.Tensor
    level: int
    confidence_logit: torch.Tensor

    @property
    def pose(self) -> geometry.Pose:
        return geometry.Pose(
            self.q.detach().to(torch.float64).numpy(),
            self.t.detach().to(torch.float64).numpy(),
        )

    def seven_vector(self) -> torch.Tensor:
        return torch.cat([self.t, self.q])


def identity_pose_tensors(dtype=torch.float32):
    t = torch.zeros(3, dtype=dtype)
    q = torch.zeros(4, dtype=dtype)
    q[0] = 1.0
    return t, q


def apply_residual(estimate: PoseEstimate, delta: torch.Tensor, confidence_logit=None) -> PoseEstimate:
    """Additive 7-vector update with quaternion renormalization.

    The returned estimate moves one level toward finer (level - 1).
    """
    delta = delta.reshape(7)
    new_t = estimate.t + delta[:3]
    raw_q = estimate.q + delta[3:]
    norm = torch.linalg.vector_norm(raw_q)
    if float(norm.detach()) < 1e-8:
        raise DegenerateUpdateError(f"quaternion update collapsed to norm {float(norm.detach()):.3e}")
    logit = estimate.confidence_logit if confidence_logit is None else confidence_logit
    return replace(
        estimate,
        t=new_t,
        q=_canonicalize(raw_q),
        level=estimate.level - 1,
        confidence_logit=logit,
    )


def fusion_weights(estimates) -> torch.Tensor:
    """Softmax over the per-level confidence logits; sums to one."""
    if not estimates:
        raise ValueError("cannot fuse an empty estimate list")
    logits = torch.stack([e.confidence_logit.reshape(()) for e in estimates])
    return torch.softmax(logits, dim=0)


def fuse_pose_tensors(estimates):
    """Confidence-weighted pose fusion in parameter space.

    Translations average linearly; quaternions are sign-aligned to the
    highest-weight estimate before the weighted mean is renormalized (valid
    for nearby rotations, not antipodal ones).
    """
    weights = fusion_weights(estimates)
    anchor = estimates[int(weights.argmax())].q.detach()
    t = sum(w * e.t for w, e in zip(weights, estimates))
    aligned = [e.q if float((e.q.detach() * anchor).sum()) >= 0 else -e.q for e in estimates]
    q = sum(w * qa for w, qa in zip(weights, aligned))
    norm = torch.linalg.vector_norm(q)
    if float(norm.detach()) < 1e-8:
        raise DegenerateUpdateError("fused quaternion collapsed to near-zero norm")
    return t, _canonicalize(q), weights


def fuse_poses(estimates) -> geometry.Pose:
    """Uncertainty-weighted fusion of per-level estimates into one pose."""
    t, q, _ = fuse_pose_tensors(estimates)
    return geometry.Pose(q.detach().to(torch.float64).numpy(), t.detach().to(torch.float64).numpy())


class ResidualPoseHead(nn.Module):
    """Per-level residual pose regressor with a confidence logit.

    Flow and depth features are global-average pooled, concatenated with the
    incoming pose 7-vector, and pushed through fully connected layers of
    size (256, 128, 64) with Leaky-ReLU and dropout.  The 7-vector output
    layer is zero-initialized; the confidence logit comes from a small
    linear head on the pooled flow features.
    """

    def __init__(self, flow_channels: int, depth_channels: int, dropout: float = 0.2):
        super().__init__()
        in_features = flow_channels + depth_channels + 7
        self.fc1 = nn.Linear(in_features, 256)
        self.fc2 = nn.Linear(256, 128)
        self.fc3 = nn.Linear(128, 64)
        self.out = nn.Linear(64, 7)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)
        self.confidence = nn.Linear(flow_channels, 1)
        self.act = nn.LeakyReLU(0.1)
        self.dropout_rate = float(dropout)

    def _dropout(self, x: torch.Tensor, generator) -> torch.Tensor:
        # explicit-generator dropout so training runs replay exactly per seed
        if not self.training or self.dropout_rate == 0.0:
            return x
        keep = 1.0 - self.dropout_rate
        mask = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) < keep
        return x * mask.to(x.dtype) / keep

    def forward(self, flow_features, depth_features, t, q, generator=None):
        """Returns (delta 7-vector, confidence logit) for one frame pair."""
        if flow_features.shape[-2:] != depth_features.shape[-2:]:
            raise ValueError("flow and depth features must share a resolution")
        pooled_flow = flow_features.mean(dim=(2, 3)).reshape(-1)
        pooled_depth = depth_features.mean(dim=(2, 3)).reshape(-1)
        x = torch.cat([pooled_flow, pooled_depth, t, q])
        x = self._dropout(self.act(self.fc1(x)), generator)
        x = self._dropout(self.act(self.fc2(x)), generator)
        x = self._dropout(self.act(self.fc3(x)), generator)
        return self.out(x), self.confidence(pooled_flow).reshape(())


class HierarchicalPoseEstimator(nn.Module):
    """Coarse-to-fine chain of residual pose heads with confidence fusion.

    ``forward`` consumes per-level flow features and depth features ordered
    coarse to fine, threads the pose 7-vector through one residual update
    per level starting from the identity, and returns the fused pose tensors
    together with every per-level estimate (the loss supervises each one).
    """

    def __init__(self, flow_channels: int, depth_channels: int, num_levels: int = 4, dropout: float = 0.2):
        super().__init__()
        self.num_levels = num_levels
        self.heads = nn.ModuleList(
            ResidualPoseHead(flow_channels, depth_channels, dropout=dropout) for _ in range(num_levels)
        )

    def forward(self, flow_features, depth_features, generator=None):
        if len(flow_features) != self.num_levels or len(depth_features) != self.num_levels:
            raise ValueError(
                f"expected features for {self.num_levels} levels, "
                f"got {len(flow_features)} flow / {len(depth_features)} depth"
            )
        dtype = flow_features[0].dtype
        t, q = identity_pose_tensors(dtype)
        estimate = PoseEstimate(t=t, q=q, level=self.num_levels, confidence_logit=torch.zeros((), dtype=dtype))
        estimates = []
        for head, flow_f, depth_f in zip(self.heads, flow_features, depth_features):
            delta, logit = head(flow_f, depth_f, estimate.t, estimate.q, generator=generator)
            estimate = apply_residual(estimate, delta, confidence_logit=logit)
            estimates.append(estimate)
        t, q, weights = fuse_pose_tensors(estimates)
        return t, q, estimates, weights
