"""Semi-supervised crowd counting with a visual state-space backbone,
mean-teacher training and background-inpainting augmentation."""

from .annotations import AnnotationRecord, PointAnnotations, load_annotations, save_annotations
from .density import (
    BinSpec,
    DensityMap,
    bin_index_map,
    generate_density_map,
    gt_foreground_mask,
    load_density,
    one_hot_probs,
    save_density,
)
from .metrics import mae, rmse
from .synth import synth_scene

__all__ = [
    "AnnotationRecord",
    "PointAnnotations",
    "load_annotations",
    "save_annotations",
    "BinSpec",
    "DensityMap",
    "bin_index_map",
    "generate_density_map",
    "gt_foreground_mask",
    "load_density",
    "one_hot_probs",
    "save_density",
    "mae",
    "rmse",
    "synth_scene",
]

__version__ = "0.1.0"
