"""Toy visual state-space backbone: stride-4 patch embedding, two stages of
SS2D blocks with a stride-2 downsample in between, output at 1/8 resolution."""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .ss2d import ChannelLayerNorm, SS2DBlock


@dataclass
class FeatureMap:
    """Feature grid (B, C, h, w) plus its stride relative to the image."""

    values: torch.Tensor
    stride: int


class VSSMBackbone(nn.Module):
    def __init__(
        self,
        in_channels: int = 3,
        channels: tuple[int, int] = (32, 64),
        depths: tuple[int, int] = (2, 2),
        state_dim: int = 8,
        scan_fn=None,
    ):
        super().__init__()
        c1, c2 = channels
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, c1, kernel_size=4, stride=4),
            ChannelLayerNorm(c1),
        )
        self.stage1 = nn.Sequential(
            *[SS2DBlock(c1, state_dim, scan_fn) for _ in range(depths[0])]
        )
        self.down = nn.Sequential(
            nn.Conv2d(c1, c2, kernel_size=2, stride=2),
            ChannelLayerNorm(c2),
        )
        self.stage2 = nn.Sequential(
            *[SS2DBlock(c2, state_dim, scan_fn) for _ in range(depths[1])]
        )
        self.out_channels = c2
        self.out_stride = 8

    def set_scan_fn(self, scan_fn) -> None:
        for m in self.modules():
            if isinstance(m, SS2DBlock):
                m.scan_fn = scan_fn

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        H, W = image.shape[-2:]
        if H % 8 or W % 8:
            raise ValueError(f"input dims must be divisible by 8, got {H}x{W}")
        x = self.stem(image)
        x = self.stage1(x)
        x = self.down(x)
        return self.stage2(x)

    def forward_features(self, image: torch.Tensor) -> FeatureMap:
        return FeatureMap(values=self.forward(image), stride=self.out_stride)
