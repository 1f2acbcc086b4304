"""2-D selective scanning: unfold the feature grid along four traversal
paths, run an independent selective scan per path, and merge the results
back by inverse permutation and summation."""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .scan import ScanParams, selective_scan_reference


def cross_scan(x: torch.Tensor) -> torch.Tensor:
    """(B, C, H, W) -> (B, 4, C, H*W) sequences: row-major, column-major and
    their reversals.  A pure permutation, no arithmetic."""
    B, C, H, W = x.shape
    p0 = x.reshape(B, C, H * W)
    p1 = x.transpose(2, 3).reshape(B, C, H * W)
    return torch.stack([p0, p1, p0.flip(-1), p1.flip(-1)], dim=1)


def cross_merge(seqs: torch.Tensor, shape: tuple[int, int]) -> torch.Tensor:
    """Inverse of :func:`cross_scan` followed by summing the four grids."""
    H, W = shape
    B, K, C, L = seqs.shape
    if K != 4 or L != H * W:
        raise ValueError(f"expected (B, 4, C, {H * W}), got {tuple(seqs.shape)}")
    g0 = seqs[:, 0].reshape(B, C, H, W)
    g1 = seqs[:, 1].reshape(B, C, W, H).transpose(2, 3)
    g2 = seqs[:, 2].flip(-1).reshape(B, C, H, W)
    g3 = seqs[:, 3].flip(-1).reshape(B, C, W, H).transpose(2, 3)
    return g0 + g1 + g2 + g3


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel axis of (B, C, H, W) tensors."""

    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        x = x.permute(0, 2, 3, 1)
        x = F.layer_norm(x, x.shape[-1:], self.weight, self.bias)
        return x.permute(0, 3, 1, 2)


def _inverse_softplus(x: torch.Tensor) -> torch.Tensor:
    return x + torch.log(-torch.expm1(-x))


class SS2DBlock(nn.Module):
    """Pre-norm residual block: project, cross-scan, selective-scan each of
    the four paths with its own parameters, cross-merge, gate, project back.

    The per-step delta, B and C of each path are linear functions of the
    step's input vector; delta goes through softplus so it stays positive,
    and the diagonal state transition is parameterized as -exp(log A) so it
    stays negative.
    """

    def __init__(self, channels: int, state_dim: int = 8, scan_fn=None):
        super().__init__()
        self.channels = channels
        self.state_dim = state_dim
        self.scan_fn = scan_fn or selective_scan_reference

        self.norm = ChannelLayerNorm(channels)
        self.in_proj = nn.Conv2d(channels, 2 * channels, 1)
        self.out_norm = ChannelLayerNorm(channels)
        self.out_proj = nn.Conv2d(channels, channels, 1)

        C, N = channels, state_dim
        self.bc_proj = nn.Parameter(torch.empty(4, 2 * N, C))
        nn.init.uniform_(self.bc_proj, -(C**-0.5), C**-0.5)
        self.delta_proj = nn.Parameter(torch.empty(4, C, C))
        nn.init.normal_(self.delta_proj, std=0.02)
        # bias chosen so softplus(bias) is log-uniform in [1e-3, 1e-1]
        dt = torch.exp(
            torch.rand(4, C) * (math.log(0.1) - math.log(1e-3)) + math.log(1e-3)
        )
        self.delta_bias = nn.Parameter(_inverse_softplus(dt))
        self.a_log = nn.Parameter(
            torch.log(torch.arange(1, N + 1, dtype=torch.float32))
            .expand(4, C, N)
            .contiguous()
        )
        self.skip = nn.Parameter(torch.ones(4, C))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, C, H, W = x.shape
        resid = x
        xz = self.in_proj(self.norm(x))
        x_in, z = xz.chunk(2, dim=1)

        seqs = cross_scan(x_in)  # (B, 4, C, L)
        bc = torch.einsum("bkcl,kpc->bkpl", seqs, self.bc_proj)
        b, c = bc.chunk(2, dim=2)  # each (B, 4, N, L)
        delta = F.softplus(
            torch.einsum("bkcl,kpc->bkpl", seqs, self.delta_proj)
            + self.delta_bias[:, :, None]
        )

        L = H * W
        params = ScanParams(
            a_diag=-torch.exp(self.a_log).reshape(4 * C, self.state_dim),
            b=b,
            c=c,
            delta=delta.reshape(B, 4 * C, L),
            d=self.skip.reshape(4 * C),
        )
        y = self.scan_fn(seqs.reshape(B, 4 * C, L), params)
        y = cross_merge(y.reshape(B, 4, C, L), (H, W))

        y = self.out_norm(y) * F.silu(z)
        return resid + self.out_proj(y)
