"""Run configuration: one human-editable YAML file, strict key checking, and
full serialization of the resolved values into every run directory."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError


def _from_dict(cls, payload: dict, path: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(payload).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in payload:
            continue
        value = payload[f.name]
        if hasattr(f.type, "__dataclass_fields__") or (
            isinstance(f.default_factory, type) and hasattr(f.default_factory, "__dataclass_fields__")
        ):
            kwargs[f.name] = _from_dict(f.default_factory, value, f"{path}.{f.name}")
        else:
            kwargs[f.name] = value
    return cls(**kwargs)


@dataclass
class DataSettings:
    root: str = "data"
    resolution: int = 64
    profile: str = "mixed"
    n_subjects: int = 12
    slices_per_subject: int = 3
    organs_per_slice: int = 2


@dataclass
class ModelSettings:
    hidden_dim: int = 128
    layers: int = 2
    heads: int = 4
    max_seq_len: int = 160
    patch_size: int = 16
    channels: int = 32
    num_queries: int = 8


@dataclass
class LossSettings:
    lambda_seg: float = 1.0
    lambda_det: float = 1.0
    w_bce: float = 1.0
    w_dice: float = 1.0
    w_l1: float = 1.0
    w_giou: float = 1.0


@dataclass
class OptimizerSettings:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.0
    grad_accum: int = 1  # exposed for fidelity; toy batches never need it


@dataclass
class TrainSettings:
    epochs: int = 40
    steps: int = 0  # nonzero overrides the epoch-derived step count
    batch_size: int = 4
    round2: bool = True
    eval_every: int = 0


@dataclass
class AdapterSettings:
    enabled: bool = False
    rank: int = 8
    alpha: float = 16.0
    dropout: float = 0.05


@dataclass
class InferenceSettings:
    obj_threshold: float = 0.5
    mask_threshold: float = 0.5
    margin_frac: float = 0.1
    max_new: int = 24


@dataclass
class CurationSettings:
    iou_thr: float = 0.75
    area_eps: float = 0.05
    small_area_frac: float = 0.01
    template_id: str = "appearance-v1"
    max_retries: int = 2
    endpoint: str = ""
    auth_env: str = "CTREASON_LVLM_TOKEN"
    timeout_s: float = 30.0
    concurrency: int = 2


@dataclass
class RunConfig:
    seed: int = 0
    data: DataSettings = field(default_factory=DataSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    loss: LossSettings = field(default_factory=LossSettings)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    adapter: AdapterSettings = field(default_factory=AdapterSettings)
    inference: InferenceSettings = field(default_factory=InferenceSettings)
    curation: CurationSettings = field(default_factory=CurationSettings)

    def __post_init__(self):
        if self.model.hidden_dim % self.model.heads:
            raise ConfigError("model.hidden_dim must be divisible by model.heads")
        if self.data.resolution % self.model.patch_size:
            raise ConfigError("data.resolution must be divisible by model.patch_size")
        if not 0 <= self.inference.mask_threshold <= 1:
            raise ConfigError("inference.mask_threshold must be in [0, 1]")
        if self.optimizer.grad_accum < 1:
            raise ConfigError("optimizer.grad_accum must be >= 1")

    # -- IO ------------------------------------------------------------------

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as f:
            payload = yaml.safe_load(f) or {}
        return cls.from_dict(payload)

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        return _from_dict(cls, payload, "config")

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)

    def loss_weights(self):
        from .objectives import LossWeights

        ls = self.loss
        return LossWeights(lambda_seg=ls.lambda_seg, lambda_det=ls.lambda_det,
                           w_bce=ls.w_bce, w_dice=ls.w_dice,
                           w_l1=ls.w_l1, w_giou=ls.w_giou)
