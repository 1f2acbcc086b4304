"""Training configuration: a single YAML file mapping onto nested
dataclasses.  Unknown keys are rejected so typos fail loudly."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augment import AugmentConfig
from .losses import LossWeights


@dataclass
class ModelConfig:
    channels: tuple = (32, 64)
    depths: tuple = (2, 2)
    state_dim: int = 8


@dataclass
class OptimizerConfig:
    kind: str = "adamw"
    lr: float = 1e-5
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.kind != "adamw":
            raise ValueError(f"unsupported optimizer {self.kind!r}")


@dataclass
class TrainConfig:
    train_dir: str = ""
    val_dir: str = ""
    out_dir: str = "runs/default"
    seed: int = 0
    epochs: int = 20

    labeled_fraction: float = 0.05
    # batch composition: 2:6 suits <=10% labeled settings, 4:4 suits 40%
    batch_labeled: int = 2
    batch_unlabeled: int = 6

    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    ema_decay: float = 0.97

    # schedule horizons: semi-loss warm-up, inpaint refresh period and the
    # decay speed of the inconsistency-level weights
    warmup_epochs: int = 20
    inpaint_period: int = 80
    inpaint_weight_decay: int = 100
    max_level: int = 2

    stride: int = 8
    bin_edges: tuple = (0.0, 1.0, 2.0, 4.0, 8.0)
    density_mode: str = "adaptive"
    sigma_fixed: float = 4.0

    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    enable_unlabeled: bool = True
    enable_inpaint: bool = True

    scan_backend: str = "reference"
    inpaint_backend: str = "mock"
    service_url: str = ""
    service_timeout: float = 30.0
    service_retries: int = 2
    inpaint_workers: int = 2
    # cap the image side seen by the teacher when building refresh masks
    # (0 = native resolution); generated records keep native resolution
    refresh_max_side: int = 0

    eval_every: int = 0  # 0: evaluate only after the final epoch

    def __post_init__(self):
        if not 0 < self.ema_decay < 1:
            raise ValueError("ema_decay must be in (0, 1)")
        if self.batch_labeled <= 0 or self.batch_unlabeled < 0:
            raise ValueError("batch sizes must be positive")
        if min(self.warmup_epochs, self.inpaint_period, self.inpaint_weight_decay) < 0:
            raise ValueError("schedule horizons must be >= 0")
        if self.scan_backend not in ("reference", "native"):
            raise ValueError(f"unknown scan backend {self.scan_backend!r}")
        if self.inpaint_backend not in ("mock", "diffusion-service"):
            raise ValueError(f"unknown inpaint backend {self.inpaint_backend!r}")


_NESTED = {
    "optimizer": OptimizerConfig,
    "model": ModelConfig,
    "loss": LossWeights,
    "augment": AugmentConfig,
}


def _build(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown config key(s) in {where}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get(key)
        if sub is not None and isinstance(value, dict):
            kwargs[key] = _build(sub, value, key)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def load_config(path: str | Path) -> TrainConfig:
    data = yaml.safe_load(Path(path).read_text())
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return _build(TrainConfig, data, "config")


def config_digest(cfg: TrainConfig) -> str:
    """Stable hash of the config contents, stored in checkpoints.

    ``out_dir`` only says where outputs go, not what is computed, so it is
    excluded; a run may be resumed into a fresh directory.
    """
    data = dataclasses.asdict(cfg)
    data.pop("out_dir", None)
    blob = json.dumps(data, sort_keys=True, default=list)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
