"""Prediction heads: exact density regression and count-interval
classification, both operating on (and emitting at) the stride-8 grid."""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import VSSMBackbone


class RegressionHead(nn.Module):
    """Stride-8 features -> non-negative density map (B, h, w)."""

    def __init__(self, in_channels: int, hidden: int = 32):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, hidden, 3, padding=1)
        self.bn = nn.BatchNorm2d(hidden)
        self.conv2 = nn.Conv2d(hidden, 1, 1)

    def forward(self, fm: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.bn(self.conv1(fm)))
        return F.relu(self.conv2(x)).squeeze(1)


class ClassificationHead(nn.Module):
    """Stride-8 features -> per-cell probabilities over K count bins,
    softmax-normalized, shape (B, K, h, w)."""

    def __init__(self, in_channels: int, num_bins: int, hidden: int = 32):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, num_bins, 1)

    def forward(self, fm: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.conv1(fm))
        return torch.softmax(self.conv2(x), dim=1)


class CountingModel(nn.Module):
    """Backbone plus the two heads; forward returns (density, bin_probs)."""

    def __init__(
        self,
        num_bins: int,
        channels: tuple[int, int] = (32, 64),
        depths: tuple[int, int] = (2, 2),
        state_dim: int = 8,
        scan_fn=None,
    ):
        super().__init__()
        self.backbone = VSSMBackbone(
            channels=channels, depths=depths, state_dim=state_dim, scan_fn=scan_fn
        )
        self.reg_head = RegressionHead(self.backbone.out_channels)
        self.cls_head = ClassificationHead(self.backbone.out_channels, num_bins)
        self.num_bins = num_bins

    def set_scan_fn(self, scan_fn) -> None:
        self.backbone.set_scan_fn(scan_fn)

    def forward(self, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        fm = self.backbone(image)
        return self.reg_head(fm), self.cls_head(fm)
