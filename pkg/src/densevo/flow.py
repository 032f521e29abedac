"""Depth-aware coarse-to-fine optical flow.

The depth modulation net turns an inverse-depth map into a per-pixel gate in
(0, 1) plus a 32-channel feature stack.  At the coarsest level the flow head
predicts a gated flow directly; at finer levels it predicts a residual that
is gated and added to the upsampled coarser flow.  A dilated context network
applies a final correction at the finest level.

Flow fields are (B, 2, H, W) with channel 0 = x displacement and channel
1 = y displacement, in pixels at that level's resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = [
    "DepthMap",
    "inverse_depth",
    "downsample_depth",
    "DepthModulation",
    "FlowHead",
    "estimate_flow",
    "refine_flow",
    "upsample_flow",
    "warp",
    "ContextNet",
]


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel metric depth in meters with a validity mask.

    Invalid pixels always carry depth 0; valid pixels are strictly positive.
    """

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if depth.shape != valid.shape or depth.ndim != 2:
            raise ValueError(f"depth {depth.shape} and valid {valid.shape} must be equal 2-D shapes")
        if not np.all(np.isfinite(depth)):
            raise ValueError("depth map contains non-finite values")
        if np.any(depth[valid] <= 0):
            raise ValueError("valid pixels must have strictly positive depth")
        depth = np.where(valid, depth, 0.0)
        depth.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self):
        return self.depth.shape

    @staticmethod
    def dense(depth: np.ndarray) -> "DepthMap":
        return DepthMap(depth, np.ones_like(np.asarray(depth), dtype=bool))

    @staticmethod
    def empty(height: int, width: int) -> "DepthMap":
        return DepthMap(np.zeros((height, width)), np.zeros((height, width), dtype=bool))

    def tensors(self, dtype=torch.float32):
        """(1, 1, H, W) depth and validity tensors."""
        depth = torch.from_numpy(self.depth.copy()).to(dtype)[None, None]
        valid = torch.from_numpy(self.valid.copy()).to(dtype)[None, None]
        return depth, valid


def inverse_depth(depth: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """1/depth on valid pixels, 0 elsewhere; bounded input for the gate net."""
    return torch.where(valid > 0.5, 1.0 / depth.clamp_min(1e-6), torch.zeros_like(depth))


def downsample_depth(depth: torch.Tensor, valid: torch.Tensor, factor: int):
    """Average depth over the valid pixels of each factor x factor cell.

    Cells without a single valid pixel come out invalid with depth 0.
    """
    if factor == 1:
        return depth, valid
    valid_f = (valid > 0.5).to(depth.dtype)
    depth_sum = F.avg_pool2d(depth * valid_f, factor) * factor**2
    count = F.avg_pool2d(valid_f, factor) * factor**2
    out_valid = count > 0.5
    out_depth = torch.where(out_valid, depth_sum / count.clamp_min(1.0), torch.zeros_like(depth_sum))
    return out_depth, out_valid.to(depth.dtype)


class DepthModulation(nn.Module):
    """Positive per-pixel weight map from inverse depth.

    Convolutions expand the single channel to 32 features; a 1x1 projection
    plus sigmoid produces the gate in (0, 1).  The 32-channel stack doubles
    as the depth feature input for the flow and pose heads.
    """

    feature_channels = 32

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 16, 3, padding=1)
        self.conv2 = nn.Conv2d(16, self.feature_channels, 3, padding=1)
        self.project = nn.Conv2d(self.feature_channels, 1, 1)
        self.act = nn.LeakyReLU(0.1)

    def features(self, inv_depth: torch.Tensor) -> torch.Tensor:
        return self.act(self.conv2(self.act(self.conv1(inv_depth))))

    def forward(self, inv_depth: torch.Tensor):
        """Returns (features, gate); gate is (B, 1, H, W) in (0, 1)."""
        feats = self.features(inv_depth)
        return feats, torch.sigmoid(self.project(feats))


class FlowHead(nn.Module):
    """1x1-convolution MLP (128, 64, 2) predicting raw flow.

    Consumes the fused feature map, encoded cost features, depth features,
    and (below the coarsest level) the upsampled previous flow.
    """

    hidden_channels = 64

    def __init__(self, feature_channels: int, cost_channels: int, depth_channels: int, with_prev_flow: bool):
        super().__init__()
        in_channels = feature_channels + cost_channels + depth_channels + (2 if with_prev_flow else 0)
        self.with_prev_flow = with_prev_flow
        self.fc1 = nn.Conv2d(in_channels, 128, 1)
        self.fc2 = nn.Conv2d(128, self.hidden_channels, 1)
        self.fc3 = nn.Conv2d(self.hidden_channels, 2, 1)
        self.act = nn.LeakyReLU(0.1)

    def forward(self, features, cost_features, depth_features, prev_flow=None):
        """Returns (raw_flow, hidden): the ungated prediction and the 64-ch
        penultimate activations reused as flow features by the pose head."""
        parts = [features, cost_features, depth_features]
        if self.with_prev_flow:
            if prev_flow is None:
                raise ValueError("this head requires prev_flow")
            parts.append(prev_flow)
        elif prev_flow is not None:
            raise ValueError("this head takes no prev_flow")
        shapes = {p.shape[-2:] for p in parts}
        if len(shapes) != 1:
            raise ValueError(f"resolution mismatch across flow head inputs: {shapes}")
        hidden = self.act(self.fc2(self.act(self.fc1(torch.cat(parts, dim=1)))))
        return self.fc3(hidden), hidden


def estimate_flow(head: FlowHead, features, cost_features, depth_features, gate, prev_flow=None):
    """Depth-modulated flow: the head's raw prediction scaled by the gate.

    Returns (flow, hidden).  Forcing ``gate`` to zero therefore forces the
    flow to zero regardless of the other inputs.
    """
    raw, hidden = head(features, cost_features, depth_features, prev_flow)
    return gate * raw, hidden


def refine_flow(coarse: torch.Tensor, residual: torch.Tensor, gate: torch.Tensor) -> torch.Tensor:
    """Residual refinement: upsampled coarse flow plus the gated residual."""
    if coarse.shape != residual.shape:
        raise ValueError(f"flow shapes differ: {tuple(coarse.shape)} vs {tuple(residual.shape)}")
    if gate.shape[-2:] != coarse.shape[-2:]:
        raise ValueError("gate resolution does not match the flow")
    return coarse + gate * residual


def upsample_flow(flow: torch.Tensor) -> torch.Tensor:
    """Bilinear 2x upsampling; values double because pixel units halve."""
    up = F.interpolate(flow, scale_factor=2, mode="bilinear", align_corners=True)
    return up * 2.0


def warp(features: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample ``features`` at (x + u_x, y + u_y); zero outside.

    Implemented with explicit gathers so integer flows reproduce exact
    shifts and the whole operation stays differentiable in float64.
    """
    if features.shape[-2:] != flow.shape[-2:]:
        raise ValueError("features and flow must share a resolution")
    b, c, h, w = features.shape
    device, dtype = features.device, features.dtype
    ys, xs = torch.meshgrid(
        torch.arange(h, device=device, dtype=dtype),
        torch.arange(w, device=device, dtype=dtype),
        indexing="ij",
    )
    x = xs[None] + flow[:, 0]
    y = ys[None] + flow[:, 1]
    x0, y0 = torch.floor(x), torch.floor(y)
    out = features.new_zeros(features.shape)
    flat = features.reshape(b, c, h * w)
    for dy in (0.0, 1.0):
        for dx in (0.0, 1.0):
            xi, yi = x0 + dx, y0 + dy
            weight = (1.0 - (x - xi).abs()) * (1.0 - (y - yi).abs())
            inside = (xi >= 0) & (xi <= w - 1) & (yi >= 0) & (yi <= h - 1)
            idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).long().reshape(b, 1, h * w)
            gathered = flat.gather(2, idx.expand(b, c, h * w)).reshape(b, c, h, w)
            out = out + gathered * (weight * inside.to(dtype))[:, None]
    return out


class ContextNet(nn.Module):
    """Dilated-convolution correction from the initial and refined flows.

    The final layer starts at zero, so at initialization the output equals
    the refined flow.
    """

    def __init__(self, hidden_channels: int = 32, dilations=(1, 2, 4)):
        super().__init__()
        layers = []
        in_channels = 4
        for d in dilations:
            layers.append(nn.Conv2d(in_channels, hidden_channels, 3, padding=d, dilation=d))
            in_channels = hidden_channels
        self.hidden = nn.ModuleList(layers)
        self.out = nn.Conv2d(hidden_channels, 2, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)
        self.act = nn.LeakyReLU(0.1)

    def forward(self, initial_flow: torch.Tensor, refined_flow: torch.Tensor) -> torch.Tensor:
        if initial_flow.shape != refined_flow.shape:
            raise ValueError("initial and refined flows must share a shape")
        x = torch.cat([initial_flow, refined_flow], dim=1)
        for layer in self.hidden:
            x = self.act(layer(x))
        return refined_flow + self.out(x)
