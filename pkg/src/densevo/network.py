"""The full two-frame odometry network.

One forward pass consumes a pair of 4-channel RGB-D frames plus the first
frame's depth map and produces the fused relative pose, the per-level pose
estimates the loss supervises, and the per-level flow fields.

Coarse-to-fine schedule (levels 3..0):

* level 3 seeds the flow from the cost volume alone;
* below it, the coarser flow is upsampled, the second frame's features are
  warped by it, and the head predicts a gated residual on top;
* the dilated context net corrects the finest flow;
* after each level's flow, a residual pose head consumes the flow features
  (head hidden state + flow field) and the depth features and updates the
  running pose 7-vector.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn

from .costvol import CostFeatureEncoder, compute_cost_volume, normalize_features
from .flow import (
    ContextNet,
    DepthModulation,
    FlowHead,
    downsample_depth,
    inverse_depth,
    refine_flow,
    upsample_flow,
    warp,
)
from .posenet import HierarchicalPoseEstimator, PoseEstimate
from .pyramid import DEFAULT_WIDTHS, FeaturePyramid

__all__ = ["OdometryNet", "OdometryOutput"]


class OdometryOutput(NamedTuple):
    t: torch.Tensor  # fused translation (3,)
    q: torch.Tensor  # fused unit quaternion (4,), w >= 0
    estimates: list  # per-level PoseEstimate, coarse to fine
    fusion_weights: torch.Tensor  # (L,), sums to 1
    flows: list  # per-level flow fields, coarse to fine


class OdometryNet(nn.Module):
    """Pyramid, cost volume, depth-gated flow, and hierarchical pose heads."""

    def __init__(
        self,
        widths=DEFAULT_WIDTHS,
        search_radius: int = 4,
        cross_attention_levels=(2, 3),
        dropout: float = 0.2,
    ):
        super().__init__()
        self.widths = tuple(widths)
        self.search_radius = int(search_radius)
        self.num_levels = len(self.widths)

        self.pyramid = FeaturePyramid(self.widths, cross_attention_levels)
        # one gate net shared across levels: the modulation is the same
        # function of inverse depth everywhere
        self.depth_modulation = DepthModulation()
        self.cost_encoders = nn.ModuleList(
            CostFeatureEncoder(self.search_radius) for _ in self.widths
        )
        depth_ch = DepthModulation.feature_channels
        self.flow_heads = nn.ModuleList(
            FlowHead(
                feature_channels=w,
                cost_channels=self.cost_encoders[i].out_channels,
                depth_channels=depth_ch,
                with_prev_flow=(i != self.num_levels - 1),
            )
            for i, w in enumerate(self.widths)
        )
        self.context = ContextNet()
        flow_feature_channels = FlowHead.hidden_channels + 2
        self.pose = HierarchicalPoseEstimator(
            flow_feature_channels, depth_ch, num_levels=self.num_levels, dropout=dropout
        )

    def level_depth(self, depth: torch.Tensor, valid: torch.Tensor):
        """Depth and validity downsampled to every pyramid level, fine to coarse."""
        out = []
        for i in range(self.num_levels):
            out.append(downsample_depth(depth, valid, 2 ** (i + 1)))
        return out

    def forward(self, rgbd_a, rgbd_b, depth_a, valid_a, generator=None) -> OdometryOutput:
        """``rgbd_*`` are (1, 4, H, W); ``depth_a``/``valid_a`` are (1, 1, H, W)."""
        pyr_a = self.pyramid(rgbd_a)
        pyr_b = self.pyramid(rgbd_b)
        depth_levels = self.level_depth(depth_a, valid_a)

        flows = []
        flow_features = []
        depth_features = []
        flow = None
        for level in range(self.num_levels - 1, -1, -1):
            f1 = pyr_a[level].fused
            f2 = pyr_b[level].fused
            d, v = depth_levels[level]
            feats_d, gate = self.depth_modulation(inverse_depth(d, v))

            if flow is None:
                f2_matched = f2
                prev = None
            else:
                prev = upsample_flow(flow)
                f2_matched = warp(f2, prev)
            cost = compute_cost_volume(
                normalize_features(f1), normalize_features(f2_matched), self.search_radius
            )
            cost_feats = self.cost_encoders[level](cost)
            raw, hidden = self.flow_heads[level](f1, cost_feats, feats_d, prev)
            if prev is None:
                flow = gate * raw
            else:
                flow = refine_flow(prev, raw, gate)
            if level == 0:
                flow = self.context(prev, flow)

            flows.append(flow)
            flow_features.append(torch.cat([hidden, flow], dim=1))
            depth_features.append(feats_d)

        t, q, estimates, weights = self.pose(flow_features, depth_features, generator=generator)
        return OdometryOutput(t=t, q=q, estimates=estimates, fusion_weights=weights, flows=flows)
