"""Foreground mask prediction from a single frame.

Topology: input conv to the base width, two {residual + downsample} stages
reaching 4x the base width at 1/4 resolution, nine residual blocks, two
{upsample + residual} stages back to the base width, then a 1-channel conv
with a logistic squash. The full profile uses widths (64, 256, 64); the toy
profile is the same net at quarter width.
"""

from __future__ import annotations

import torch
from torch import nn

from .blocks import ResidualBlock, Downsample, Upsample
from .config import ModelProfile


class MaskNet(nn.Module):
    def __init__(self, profile: ModelProfile):
        super().__init__()
        w, mid = profile.masknet_width, profile.masknet_mid
        half = mid // 2
        self.conv_in = nn.Conv2d(3, w, 3, padding=1)
        self.down = nn.Sequential(
            ResidualBlock(w), Downsample(w, half),
            ResidualBlock(half), Downsample(half, mid),
        )
        self.mid = nn.Sequential(*[ResidualBlock(mid)
                                   for _ in range(profile.masknet_blocks)])
        self.up = nn.Sequential(
            Upsample(mid, half), ResidualBlock(half),
            Upsample(half, w), ResidualBlock(w),
        )
        self.conv_out = nn.Conv2d(w, 1, 3, padding=1)

    def forward(self, frame: torch.Tensor) -> torch.Tensor:
        """(B,3,H,W) frame -> (B,1,H,W) soft mask, values strictly in (0,1)."""
        if not torch.isfinite(frame).all():
            raise ValueError("frame contains non-finite pixels")
        h = self.conv_in(frame)
        h = self.up(self.mid(self.down(h)))
        return torch.sigmoid(self.conv_out(h))
