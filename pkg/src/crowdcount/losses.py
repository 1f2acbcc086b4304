"""Training losses and schedules.

All reductions are per-cell means, so loss magnitudes are independent of map
resolution.  Teacher-side inputs of the consistency losses are detached, so
no gradient ever reaches the teacher.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

LOG_CLAMP = 1e-12
TV_EPS = 1e-8


@dataclass
class LossWeights:
    alpha: float = 0.01  # TV weight inside the regression loss
    ssim_scales: int = 3  # number of average-pooled scales (J)
    fg_tau: float = 1e-3  # foreground-mask threshold on gt density
    warmup_epochs: int = 20
    w_reg: float = 1.0
    w_cls: float = 1.0
    w_unlabeled: float = 1.0
    w_inpaint: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.ssim_scales < 1:
            raise ValueError("ssim_scales must be >= 1")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")


def _as_batched(x: torch.Tensor) -> torch.Tensor:
    if x.ndim == 2:
        return x.unsqueeze(0)
    if x.ndim == 3:
        return x
    raise ValueError(f"expected (h, w) or (B, h, w), got {tuple(x.shape)}")


def _gaussian_window(size: int, sigma: float, dtype, device) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a: torch.Tensor, b: torch.Tensor, window_size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """Mean local SSIM over valid Gaussian windows.

    Stabilizers are C1 = (0.01 R)^2 and C2 = (0.03 R)^2 with R the largest
    observed value (floored at 1).  The window shrinks to the smaller map
    dimension when the map is tinier than 11 cells.
    """
    a, b = _as_batched(a), _as_batched(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    h, w = a.shape[-2:]
    win = min(window_size, h, w)
    if win % 2 == 0:
        win -= 1
    kernel = _gaussian_window(win, sigma, a.dtype, a.device)[None, None]

    r = torch.clamp(torch.maximum(a.max(), b.max()), min=1.0)
    c1 = (0.01 * r) ** 2
    c2 = (0.03 * r) ** 2

    a4, b4 = a.unsqueeze(1), b.unsqueeze(1)
    mu1 = F.conv2d(a4, kernel)
    mu2 = F.conv2d(b4, kernel)
    var1 = F.conv2d(a4 * a4, kernel) - mu1 * mu1
    var2 = F.conv2d(b4 * b4, kernel) - mu2 * mu2
    cov = F.conv2d(a4 * b4, kernel) - mu1 * mu2
    score = ((2 * mu1 * mu2 + c1) * (2 * cov + c2)) / (
        (mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2)
    )
    return score.mean()


def loss_tv(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Total-variation distance between the mass-normalized maps, scaled by
    the ground-truth mass (zero for any positive rescaling of gt)."""
    pred, gt = _as_batched(pred), _as_batched(gt)
    if pred.shape != gt.shape:
        raise ValueError("shape mismatch")
    p_sum = pred.sum(dim=(1, 2), keepdim=True)
    g_sum = gt.sum(dim=(1, 2), keepdim=True)
    p = pred / (p_sum + TV_EPS)
    q = gt / (g_sum + TV_EPS)
    per_sample = 0.5 * (p - q).abs().sum(dim=(1, 2)) * g_sum.reshape(-1)
    return per_sample.mean()


def loss_reg(
    pred: torch.Tensor,
    gt: torch.Tensor,
    mask: torch.Tensor,
    w: LossWeights,
) -> torch.Tensor:
    """Multi-scale structural dissimilarity of the foreground-masked maps
    plus alpha times the TV term on the unmasked maps."""
    pred, gt, mask = _as_batched(pred), _as_batched(gt), _as_batched(mask)
    if not pred.shape == gt.shape == mask.shape:
        raise ValueError("pred, gt and mask must share shape")
    h, wd = pred.shape[-2:]
    if min(h, wd) < 2**w.ssim_scales:
        raise ValueError(
            f"map {h}x{wd} too small for {w.ssim_scales} pooling scales"
        )
    pm = (pred * mask).unsqueeze(1)
    gm = (gt * mask).unsqueeze(1)
    total = pred.new_zeros(())
    for _ in range(w.ssim_scales):
        pm = F.avg_pool2d(pm, 2)
        gm = F.avg_pool2d(gm, 2)
        total = total + (1 - ssim(pm.squeeze(1), gm.squeeze(1)))
    return total / w.ssim_scales + w.alpha * loss_tv(pred, gt)


def loss_cls(gt_bins: torch.Tensor, probs: torch.Tensor) -> torch.Tensor:
    """Mean per-cell cross-entropy against one-hot bin targets."""
    if gt_bins.ndim == 2:
        gt_bins = gt_bins.unsqueeze(0)
    if probs.ndim == 3:
        probs = probs.unsqueeze(0)
    if gt_bins.shape != (probs.shape[0],) + probs.shape[2:]:
        raise ValueError("bin map / probability map shapes do not align")
    picked = probs.gather(1, gt_bins.unsqueeze(1).long()).squeeze(1)
    return -torch.log(picked.clamp(min=LOG_CLAMP)).mean()


def loss_inpaint(
    y_st: torch.Tensor,
    y_ema: torch.Tensor,
    p_st: torch.Tensor,
    p_ema: torch.Tensor,
    mask: torch.Tensor,
) -> torch.Tensor:
    """Inconsistency-weighted consistency loss; the weight mask is broadcast
    over the bin channels and teacher inputs are constants."""
    y_st, y_ema, mask = _as_batched(y_st), _as_batched(y_ema), _as_batched(mask)
    if p_st.ndim == 3:
        p_st, p_ema = p_st.unsqueeze(0), p_ema.unsqueeze(0)
    if y_st.shape != y_ema.shape or p_st.shape != p_ema.shape:
        raise ValueError("student/teacher shapes do not align")
    mask = mask.to(y_st.dtype)
    dens = (mask * (y_st - y_ema.detach()).abs()).mean()
    prob = (mask.unsqueeze(1) * (p_st - p_ema.detach()).abs()).mean()
    return dens + prob


def loss_consistency(
    y_st: torch.Tensor,
    y_ema: torch.Tensor,
    p_st: torch.Tensor,
    p_ema: torch.Tensor,
) -> torch.Tensor:
    """Unweighted consistency loss; identical to loss_inpaint with an
    all-ones mask (same reduction order)."""
    ones = torch.ones_like(y_st if y_st.ndim == 3 else y_st.unsqueeze(0))
    return loss_inpaint(y_st, y_ema, p_st, p_ema, ones)


def warmup_weight(epoch: int, warmup_epochs: int) -> float:
    """Gaussian ramp exp(-5 (1 - t/T)^2) before epoch T, then 1."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if warmup_epochs <= 0 or epoch >= warmup_epochs:
        return 1.0
    return math.exp(-5.0 * (1.0 - epoch / warmup_epochs) ** 2)


def total_loss(l_s_reg, l_s_cls, l_u, l_inp, epoch: int, w: LossWeights):
    """Combine supervised, consistency and inpainting terms; the latter two
    are scaled by the warm-up weight."""
    parts = {"l_s_reg": l_s_reg, "l_s_cls": l_s_cls, "l_u": l_u, "l_inp": l_inp}
    for name, value in parts.items():
        v = float(value.detach() if torch.is_tensor(value) else value)
        if not math.isfinite(v):
            raise ValueError(f"non-finite loss component {name}: {v}")
    lam = warmup_weight(epoch, w.warmup_epochs)
    return (
        w.w_reg * l_s_reg
        + w.w_cls * l_s_cls
        + lam * w.w_unlabeled * l_u
        + lam * w.w_inpaint * l_inp
    )
