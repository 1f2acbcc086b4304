"""On-disk scene datasets (images + JSONL annotations) and tensor helpers."""

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .annotations import AnnotationRecord, load_annotations
from .density import DensityMap, generate_density_map

NORM_MEAN = 0.5
NORM_STD = 0.5


class SceneDataset:
    """Lazy loader over a dataset directory produced by the synth command:
    ``<root>/images/*.png`` plus ``<root>/annotations.jsonl``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        ann_path = self.root / "annotations.jsonl"
        if not ann_path.is_file():
            raise FileNotFoundError(f"no annotations.jsonl under {self.root}")
        self.records: list[AnnotationRecord] = load_annotations(ann_path)
        self._density_cache: dict[tuple, DensityMap] = {}

    def __len__(self) -> int:
        return len(self.records)

    def image_id(self, index: int) -> str:
        return Path(self.records[index].image).stem

    def load_image(self, index: int) -> np.ndarray:
        path = self.root / self.records[index].image
        return np.asarray(Image.open(path).convert("RGB"))

    def gt_count(self, index: int) -> int:
        return len(self.records[index].points)

    def density(
        self,
        index: int,
        stride: int = 8,
        mode: str = "adaptive",
        sigma_fixed: float = 4.0,
    ) -> DensityMap:
        key = (index, stride, mode, sigma_fixed)
        if key not in self._density_cache:
            ann = self.records[index].to_point_annotations()
            self._density_cache[key] = generate_density_map(
                ann, stride=stride, mode=mode, sigma_fixed=sigma_fixed
            )
        return self._density_cache[key]


def split_labeled(n: int, labeled_fraction: float, seed: int) -> tuple[list, list]:
    """Deterministic labeled/unlabeled index split; at least one labeled."""
    if n == 0:
        raise ValueError("empty dataset")
    k = max(1, int(round(labeled_fraction * n)))
    order = np.random.default_rng([seed, 0xD5]).permutation(n)
    return sorted(order[:k].tolist()), sorted(order[k:].tolist())


def to_model_input(view: np.ndarray) -> torch.Tensor:
    """Float [0,1] HWC view -> normalized CHW tensor."""
    t = torch.from_numpy(np.ascontiguousarray(view, dtype=np.float32))
    return (t.permute(2, 0, 1) - NORM_MEAN) / NORM_STD


def image_to_unit(image: np.ndarray) -> np.ndarray:
    return image.astype(np.float64) / 255.0
