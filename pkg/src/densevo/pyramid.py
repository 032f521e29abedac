"""Four-level RGB-D feature pyramid with attention fusion.

The RGB and depth channels of the 4-channel input run through separate
convolutional stems.  Levels live at 1/2, 1/4, 1/8, and 1/16 of the input
resolution (level 0 is the finest).  Per level, channel attention gates the
RGB stream, spatial attention gates the depth stream, and on the two
coarsest levels bidirectional cross attention exchanges information between
the streams; a 1x1 convolution merges everything into the fused feature map
used downstream.

Cross attention treats pixels as tokens, so it is restricted to levels where
the token count is small; the fine levels fall back to concatenation + 1x1
convolution.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = [
    "ChannelAttention",
    "SpatialAttention",
    "CrossAttention",
    "PyramidLevel",
    "FeaturePyramid",
    "DEFAULT_WIDTHS",
]

DEFAULT_WIDTHS = (16, 32, 64, 96)


class ChannelAttention(nn.Module):
    """Squeeze-and-excitation gate from concatenated global avg/max pooling.

    gate = sigmoid(w2 relu(w1 [GAP(x), GMP(x)])), one scalar per channel.
    """

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.w1 = nn.Linear(2 * channels, hidden)
        self.w2 = nn.Linear(hidden, channels)
        self.channels = channels

    def gate(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        pooled = torch.cat([x.mean(dim=(2, 3)), x.amax(dim=(2, 3))], dim=1)
        return torch.sigmoid(self.w2(F.relu(self.w1(pooled))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.gate(x)[:, :, None, None] * x


class SpatialAttention(nn.Module):
    """Per-pixel gate from channelwise max/avg pooling through a 3x3 conv."""

    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, 3, padding=1)

    def gate(self, x: torch.Tensor) -> torch.Tensor:
        stacked = torch.cat([x.amax(dim=1, keepdim=True), x.mean(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(stacked))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.gate(x) * x


class CrossAttention(nn.Module):
    """Bidirectional single-head attention between RGB and depth features.

    Pixels are tokens. Each modality queries the other:
    out = softmax(q_r k_d^T / sqrt(d_k)) v_d + softmax(q_d k_r^T / sqrt(d_k)) v_r
    """

    def __init__(self, channels: int):
        super().__init__()
        self.qkv_rgb = nn.Conv2d(channels, 3 * channels, 1)
        self.qkv_depth = nn.Conv2d(channels, 3 * channels, 1)
        self.scale = float(channels) ** 0.5
        self.channels = channels

    def _tokens(self, proj: torch.Tensor):
        b, _, h, w = proj.shape
        q, k, v = proj.chunk(3, dim=1)
        flat = lambda t: t.reshape(b, self.channels, h * w).transpose(1, 2)
        return flat(q), flat(k), flat(v)

    def attention_weights(self, x_rgb: torch.Tensor, x_depth: torch.Tensor):
        """(rgb->depth, depth->rgb) softmax matrices, each (B, HW, HW)."""
        if x_rgb.shape[-2:] != x_depth.shape[-2:]:
            raise ValueError("cross attention requires equal spatial sizes")
        q_r, k_r, _ = self._tokens(self.qkv_rgb(x_rgb))
        q_d, k_d, _ = self._tokens(self.qkv_depth(x_depth))
        w_rd = torch.softmax(q_r @ k_d.transpose(1, 2) / self.scale, dim=-1)
        w_dr = torch.softmax(q_d @ k_r.transpose(1, 2) / self.scale, dim=-1)
        return w_rd, w_dr

    def forward(self, x_rgb: torch.Tensor, x_depth: torch.Tensor) -> torch.Tensor:
        if x_rgb.shape[-2:] != x_depth.shape[-2:]:
            raise ValueError("cross attention requires equal spatial sizes")
        b, _, h, w = x_rgb.shape
        q_r, k_r, v_r = self._tokens(self.qkv_rgb(x_rgb))
        q_d, k_d, v_d = self._tokens(self.qkv_depth(x_depth))
        from_depth = torch.softmax(q_r @ k_d.transpose(1, 2) / self.scale, dim=-1) @ v_d
        from_rgb = torch.softmax(q_d @ k_r.transpose(1, 2) / self.scale, dim=-1) @ v_r
        out = from_depth + from_rgb
        return out.transpose(1, 2).reshape(b, self.channels, h, w)


class _DownBlock(nn.Module):
    """Stride-2 convolution followed by a pre-activation residual block."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.down = nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1)
        self.conv1 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.down(x)
        return x + self.conv2(self.act(self.conv1(self.act(x))))


class PyramidLevel(NamedTuple):
    rgb: torch.Tensor
    depth: torch.Tensor
    fused: torch.Tensor


class FeaturePyramid(nn.Module):
    """Two-stream RGB-D pyramid with per-level attention fusion.

    Input is (B, 4, H, W) with H and W divisible by 16 (four halvings).
    Output level i is (B, widths[i], H / 2**(i+1), W / 2**(i+1)).
    """

    def __init__(self, widths=DEFAULT_WIDTHS, cross_attention_levels=(2, 3)):
        super().__init__()
        self.widths = tuple(widths)
        self.cross_attention_levels = tuple(cross_attention_levels)
        self.num_levels = len(self.widths)

        rgb_blocks, depth_blocks = [], []
        in_rgb, in_depth = 3, 1
        for width in self.widths:
            rgb_blocks.append(_DownBlock(in_rgb, width))
            depth_blocks.append(_DownBlock(in_depth, width))
            in_rgb = in_depth = width
        self.rgb_blocks = nn.ModuleList(rgb_blocks)
        self.depth_blocks = nn.ModuleList(depth_blocks)

        self.channel_attention = nn.ModuleList(ChannelAttention(w) for w in self.widths)
        self.spatial_attention = nn.ModuleList(SpatialAttention() for _ in self.widths)
        self.cross_attention = nn.ModuleDict(
            {str(i): CrossAttention(self.widths[i]) for i in self.cross_attention_levels}
        )
        self.merge = nn.ModuleList(
            nn.Conv2d((3 if i in self.cross_attention_levels else 2) * w, w, 1)
            for i, w in enumerate(self.widths)
        )

    def forward(self, rgbd: torch.Tensor) -> list[PyramidLevel]:
        if rgbd.dim() != 4 or rgbd.shape[1] != 4:
            raise ValueError(f"expected (B, 4, H, W) input, got {tuple(rgbd.shape)}")
        h, w = rgbd.shape[-2:]
        divisor = 2 ** self.num_levels
        if h % divisor or w % divisor:
            raise ValueError(f"input size {h}x{w} must be divisible by {divisor}")

        x_rgb, x_depth = rgbd[:, :3], rgbd[:, 3:]
        levels = []
        for i in range(self.num_levels):
            x_rgb = self.rgb_blocks[i](x_rgb)
            x_depth = self.depth_blocks[i](x_depth)
            attended_rgb = self.channel_attention[i](x_rgb)
            attended_depth = self.spatial_attention[i](x_depth)
            parts = [attended_rgb, attended_depth]
            if i in self.cross_attention_levels:
                parts.append(self.cross_attention[str(i)](x_rgb, x_depth))
            fused = self.merge[i](torch.cat(parts, dim=1))
            levels.append(PyramidLevel(rgb=x_rgb, depth=x_depth, fused=fused))
        return levels
