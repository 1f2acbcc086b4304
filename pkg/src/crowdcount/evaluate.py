"""Whole-image evaluation: predicted count = integral of the density map."""

from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from .dataset import SceneDataset, image_to_unit, to_model_input
from .metrics import mae, rmse

MAX_SIDE = 1920


@dataclass
class EvalResult:
    mae: float
    rmse: float
    per_image: list  # (image_id, gt_count, predicted_count)


def _prepare(image: np.ndarray, stride: int, extra_pad: int, max_side: int = MAX_SIDE):
    h, w = image.shape[:2]
    if max(h, w) > max_side:
        scale = max_side / max(h, w)
        new_w, new_h = int(round(w * scale)), int(round(h * scale))
        image = np.asarray(
            Image.fromarray(image).resize((new_w, new_h), Image.BILINEAR)
        )
        h, w = image.shape[:2]
    pad_h = (-h) % stride + extra_pad
    pad_w = (-w) % stride + extra_pad
    if pad_h or pad_w:
        image = np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)), mode="reflect")
    valid_h = -(-h // stride)
    valid_w = -(-w // stride)
    return image, valid_h, valid_w


def predict_density(
    model, image: np.ndarray, stride: int = 8, extra_pad: int = 0
) -> np.ndarray:
    """Run the model on one whole image; density cells that only cover
    padding are cropped away before returning."""
    padded, valid_h, valid_w = _prepare(image, stride, extra_pad)
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    try:
        with torch.no_grad():
            dens, _ = model(to_model_input(image_to_unit(padded)).unsqueeze(0))
    finally:
        if was_training:
            model.train()
    return dens[0, :valid_h, :valid_w].cpu().numpy()


def evaluate(model, dataset: SceneDataset, stride: int = 8) -> EvalResult:
    """Deterministic whole-image MAE/RMSE of a model over a dataset."""
    if len(dataset) == 0:
        raise ValueError("empty evaluation dataset")
    per_image = []
    for i in range(len(dataset)):
        density = predict_density(model, dataset.load_image(i), stride=stride)
        per_image.append(
            (dataset.image_id(i), float(dataset.gt_count(i)), float(density.sum()))
        )
    gt = [g for _, g, _ in per_image]
    pred = [p for _, _, p in per_image]
    return EvalResult(mae=mae(gt, pred), rmse=rmse(gt, pred), per_image=per_image)
