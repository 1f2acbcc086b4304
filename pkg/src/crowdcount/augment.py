"""Weak/strong augmentation for mean-teacher training.

Geometry (crop + flip) is shared between the two views of a pair so teacher
pseudo-labels stay cell-for-cell aligned with student predictions; only
photometric operations and patch masking differ, and those never touch the
targets.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


@dataclass
class AugmentConfig:
    crop_size: int = 128
    flip_p: float = 0.5
    jitter: float = 0.3  # brightness/contrast/saturation factor range
    gray_p: float = 0.1
    blur_p: float = 0.2
    mask_patch: int = 32
    mask_ratio: float = 0.3


@dataclass
class CropRecord:
    """Shared geometric transform of an augmented pair."""

    x0: int
    y0: int
    flip: bool


@dataclass
class AugmentedPair:
    weak: np.ndarray
    strong: np.ndarray
    record: CropRecord
    targets: dict = field(default_factory=dict)


def _reflect_pad_to(image: np.ndarray, min_h: int, min_w: int) -> np.ndarray:
    h, w = image.shape[:2]
    ph, pw = max(min_h - h, 0), max(min_w - w, 0)
    if ph == 0 and pw == 0:
        return image
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, pad, mode="reflect")


def paired_crop(
    image: np.ndarray,
    targets: dict,
    crop_size: int,
    rng: np.random.Generator,
    stride: int = 8,
    flip_p: float = 0.5,
):
    """Crop image and stride-aligned targets with one shared window plus an
    optional shared horizontal flip.

    Target arrays whose trailing dims match the image are cropped at pixel
    resolution; arrays matching the stride grid are cropped in grid cells.
    The crop origin snaps to the stride grid so both stay aligned.
    """
    if crop_size % stride:
        raise ValueError("crop size must be a multiple of the stride")
    image = _reflect_pad_to(image, crop_size, crop_size)
    h, w = image.shape[:2]
    max_y = (h - crop_size) // stride
    max_x = (w - crop_size) // stride
    y0 = int(rng.integers(0, max_y + 1)) * stride
    x0 = int(rng.integers(0, max_x + 1)) * stride
    flip = bool(rng.random() < flip_p)

    out_img = image[y0 : y0 + crop_size, x0 : x0 + crop_size]
    if flip:
        out_img = out_img[:, ::-1]
    out_img = np.ascontiguousarray(out_img)

    gh, gw = h // stride, w // stride
    cells = crop_size // stride
    out_targets = {}
    for name, arr in targets.items():
        th, tw = arr.shape[-2:]
        if (th, tw) == (h, w):
            view = arr[..., y0 : y0 + crop_size, x0 : x0 + crop_size]
        elif (th, tw) == (gh, gw):
            cy, cx = y0 // stride, x0 // stride
            view = arr[..., cy : cy + cells, cx : cx + cells]
        else:
            raise ValueError(
                f"target {name!r} shape {arr.shape} matches neither image nor grid"
            )
        if flip:
            view = view[..., ::-1]
        out_targets[name] = np.ascontiguousarray(view)
    return out_img, out_targets, CropRecord(x0=x0, y0=y0, flip=flip)


def weak_augment(view: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Weak photometric augmentation is the identity; geometry was already
    applied by the paired crop."""
    return view


def _luminance(view: np.ndarray) -> np.ndarray:
    return (
        0.299 * view[..., 0] + 0.587 * view[..., 1] + 0.114 * view[..., 2]
    )[..., None]


def strong_augment(
    view: np.ndarray,
    rng: np.random.Generator,
    cfg: AugmentConfig = AugmentConfig(),
) -> np.ndarray:
    """Color jitter, optional grayscale and blur, then patch-aligned random
    masking.  Input and output are float arrays in [0, 1]."""
    out = view.astype(np.float64, copy=True)
    if cfg.jitter > 0:
        out = out * (1 + rng.uniform(-cfg.jitter, cfg.jitter))
        mean = out.mean()
        out = (out - mean) * (1 + rng.uniform(-cfg.jitter, cfg.jitter)) + mean
        gray = _luminance(out)
        out = gray + (out - gray) * (1 + rng.uniform(-cfg.jitter, cfg.jitter))
    if cfg.gray_p > 0 and rng.random() < cfg.gray_p:
        out = np.repeat(_luminance(out), 3, axis=-1)
    if cfg.blur_p > 0 and rng.random() < cfg.blur_p:
        sigma = rng.uniform(0.3, 1.2)
        out = ndimage.gaussian_filter(out, sigma=(sigma, sigma, 0))
    out = np.clip(out, 0.0, 1.0)
    if cfg.mask_ratio > 0:
        out, _ = patch_aligned_mask(out, cfg.mask_patch, cfg.mask_ratio, rng)
    return out


def patch_aligned_mask(
    view: np.ndarray,
    patch_size: int = 32,
    ratio: float = 0.3,
    rng: np.random.Generator = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Zero out exactly round(ratio * n_patches) patches on the patch grid
    (round half up); returns the view and the sorted masked-patch indices."""
    h, w = view.shape[:2]
    if h % patch_size or w % patch_size:
        raise ValueError(f"dims {h}x{w} not divisible by patch size {patch_size}")
    ph, pw = h // patch_size, w // patch_size
    n = ph * pw
    k = int(np.floor(ratio * n + 0.5))
    if k == 0:
        return view, np.empty(0, dtype=np.int64)
    chosen = np.sort(rng.permutation(n)[:k])
    out = view.copy()
    for idx in chosen:
        i, j = divmod(int(idx), pw)
        out[
            i * patch_size : (i + 1) * patch_size,
            j * patch_size : (j + 1) * patch_size,
        ] = 0.0
    return out, chosen
