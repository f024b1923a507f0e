"""Validated hyperparameter records and config-file loading."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


VARIANTS = ("full", "no_lid", "concat", "no_icr")


@dataclass(frozen=True)
class ModelConfig:
    prefix_tokens: int = 8  # k
    intent_tokens: int = 3  # m
    intent_dim: int = 16  # d_I, width of the frozen LID backbone
    hidden_dim: int = 64  # d
    layers: int = 2  # L
    heads: int = 2
    dropout: float = 0.2
    p_mask: float = 0.2
    temperature: float = 0.1  # tau
    n_max: int = 50
    backbone_layers: int = 2
    backbone_heads: int = 2
    variant: str = "full"
    ablation_mode: bool = False  # permits k = 0

    def __post_init__(self) -> None:
        k_min = 0 if self.ablation_mode else 2
        if not k_min <= self.prefix_tokens <= 32:
            raise ConfigError(f"prefix_tokens must lie in [{k_min}, 32], got {self.prefix_tokens}")
        if not 1 <= self.intent_tokens <= 5:
            raise ConfigError(f"intent_tokens must lie in [1, 5], got {self.intent_tokens}")
        if self.intent_dim not in (8, 16, 32):
            raise ConfigError(f"intent_dim must be one of 8, 16, 32, got {self.intent_dim}")
        if self.hidden_dim < 2 or self.layers < 1 or self.backbone_layers < 1:
            raise ConfigError("hidden_dim >= 2 and at least one layer required")
        if self.hidden_dim % self.heads or self.intent_dim % self.backbone_heads:
            raise ConfigError("model widths must be divisible by their head counts")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not 0.0 <= self.p_mask < 1.0:
            raise ConfigError("p_mask must lie in [0, 1)")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.n_max < 1:
            raise ConfigError("n_max must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    lambda_icr: float = 0.1
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_steps: int | None = None
    samples_per_user: int | None = None  # None: every training cut each epoch

    def __post_init__(self) -> None:
        if self.lambda_icr < 0:
            raise ConfigError("lambda_icr must be >= 0")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("learning_rate, batch_size and max_epochs must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam moment coefficients must lie in [0, 1)")


@dataclass(frozen=True)
class DataConfig:
    """Either a log file (``path`` + ``format``) or synthetic generation."""

    path: str | None = None
    format: str | None = None
    core: int = 5
    synthetic_users: int = 2000
    synthetic_items: int = 500
    synthetic_intents: int = 4
    seq_len_min: int = 8
    seq_len_max: int = 20
    synthetic_noise: float = 0.1
    switch_prob: float = 0.2
    data_seed: int = 0

    def __post_init__(self) -> None:
        if self.format not in (None, "tsv", "jsonl", "dataset"):
            raise ConfigError(f"unknown data format {self.format!r}")
        if self.seq_len_min < 3 or self.seq_len_max < self.seq_len_min:
            raise ConfigError("need 3 <= seq_len_min <= seq_len_max")


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    backbone_train: TrainConfig | None = None
    seeds: tuple[int, ...] = (0, 1, 2)
    noise_ratio: float = 0.2
    noise_seed: int = 1234
    sweep_prefix: tuple[int, ...] = (2, 8)
    sweep_intents: tuple[int, ...] = (1, 3)
    eval_batch_size: int = 512

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("at least one seed required")
        if not 0.0 <= self.noise_ratio <= 1.0:
            raise ConfigError("noise_ratio must lie in [0, 1]")

    @property
    def backbone(self) -> TrainConfig:
        return self.backbone_train or self.train

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seeds=(seed,))


def _build(cls, raw: dict | None, where: str):
    raw = dict(raw or {})
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    for key, value in raw.items():
        if isinstance(value, list):
            raw[key] = tuple(value)
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    sections = {
        "data": _build(DataConfig, raw.pop("data", None), "data"),
        "model": _build(ModelConfig, raw.pop("model", None), "model"),
        "train": _build(TrainConfig, raw.pop("train", None), "train"),
    }
    backbone = raw.pop("backbone_train", None)
    if backbone is not None:
        sections["backbone_train"] = _build(TrainConfig, backbone, "backbone_train")
    return _build(ExperimentConfig, {**raw, **sections}, "experiment")


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return config_from_dict(raw)
