"""Normalized correlation cost volume between consecutive-frame features.

A cost volume for search radius ``S`` has ``(2S + 1)**2`` channels; channel
``k = (dy + S) * (2S + 1) + (dx + S)`` holds the per-pixel feature inner
product between frame 1 at ``(x, y)`` and frame 2 at ``(x + dx, y + dy)``
(row-major over ``dy`` then ``dx``, both in ``[-S, S]``).  Displacements that
leave the image contribute exactly zero.

Feature tensors are ``(B, C, H, W)``.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = ["normalize_features", "compute_cost_volume", "cost_channel_index", "CostFeatureEncoder"]

# Padded regions and empty feature vectors are routine, so zero vectors map to
# zero instead of raising: the norm is clamped from below.
_NORM_EPS = 1e-12


def normalize_features(features: torch.Tensor, eps: float = _NORM_EPS) -> torch.Tensor:
    """L2-normalize every pixel's channel vector; zero vectors stay zero."""
    norm = torch.linalg.vector_norm(features, dim=1, keepdim=True)
    return features / norm.clamp_min(eps)


def cost_channel_index(dx: int, dy: int, radius: int) -> int:
    """Channel holding displacement ``(dx, dy)``."""
    side = 2 * radius + 1
    return (dy + radius) * side + (dx + radius)


def compute_cost_volume(f1: torch.Tensor, f2: torch.Tensor, radius: int) -> torch.Tensor:
    """Correlation volume: channel sums of ``f1(x, y) * f2(x + dx, y + dy)``.

    Inputs are expected to be normalized already (see
    :func:`normalize_features`), which bounds every entry to [-1, 1].
    """
    if f1.shape != f2.shape:
        raise ValueError(f"feature shapes differ: {tuple(f1.shape)} vs {tuple(f2.shape)}")
    if radius < 0:
        raise ValueError(f"search radius must be >= 0, got {radius}")
    _, _, h, w = f1.shape
    padded = F.pad(f2, (radius, radius, radius, radius))
    channels = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            shifted = padded[:, :, radius + dy : radius + dy + h, radius + dx : radius + dx + w]
            channels.append((f1 * shifted).sum(dim=1))
    return torch.stack(channels, dim=1)


class CostFeatureEncoder(nn.Module):
    """Cascaded 3x3 convolutions turning a cost volume into motion features."""

    def __init__(self, radius: int = 4, hidden_channels: int = 96, out_channels: int = 64):
        super().__init__()
        in_channels = (2 * radius + 1) ** 2
        self.conv1 = nn.Conv2d(in_channels, hidden_channels, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden_channels, out_channels, 3, padding=1)
        self.out_channels = out_channels

    def forward(self, cost: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.conv1(cost))
        return F.relu(self.conv2(x))
