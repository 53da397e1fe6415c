"""Run configuration: dataclasses plus strict YAML loading.

The config file is a hierarchical key-value document with three sections
(data, model, optimizer) and two top-level scalars (epochs, seed). Unknown
keys are errors; see configs/example.yaml for the canonical example.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..errors import ConfigurationError

MODEL_ARCHS = ("mlp", "desk-cnn")
OPTIMIZER_KINDS = ("sgd", "bilevel")
DATA_FORMATS = ("idx", "csv")


@dataclass
class DataConfig:
    path: str = ""
    format: str = "idx"
    test_path: str = ""
    noise_level: float = 0.0
    permute_pixels: bool = False
    validation_ratio: float = 0.0

    def validate(self) -> None:
        if not self.path:
            raise ConfigurationError("data.path is required")
        if self.format not in DATA_FORMATS:
            raise ConfigurationError(f"data.format must be one of {DATA_FORMATS}")
        if not self.test_path:
            raise ConfigurationError("data.test_path is required")
        if not 0.0 <= self.noise_level <= 1.0:
            raise ConfigurationError(f"data.noise_level must be in [0, 1], got {self.noise_level}")
        if not 0.0 <= self.validation_ratio < 1.0:
            raise ConfigurationError(
                f"data.validation_ratio must be in [0, 1), got {self.validation_ratio}"
            )


@dataclass
class ModelConfig:
    arch: str = "mlp"
    hidden: list[int] = field(default_factory=lambda: [256])
    dropout_keep: float = 1.0
    shared_dropout_mask: bool = True

    def validate(self) -> None:
        if self.arch not in MODEL_ARCHS:
            raise ConfigurationError(f"model.arch must be one of {MODEL_ARCHS}")
        if not self.hidden or any(int(h) < 1 for h in self.hidden):
            raise ConfigurationError("model.hidden must be a non-empty list of positive sizes")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigurationError(
                f"model.dropout_keep must be in (0, 1], got {self.dropout_keep}"
            )


@dataclass
class OptimizerConfig:
    kind: str = "bilevel"
    learning_rate: float = 0.01
    decay: float = 0.95
    momentum: float = 0.9
    lambda_hat: float = 1.0
    mu_hat: float = 0.01
    k: int = 8
    batch_size: int = 16
    use_l1: bool = True
    per_layer_weights: bool = False
    exact_solve: bool = False
    stratified: bool = True
    low_weight_threshold: float = 0.25
    # test support: feed the identical batch as validation and training,
    # which reduces the bilevel update to the plain SGD step
    force_identical_batches: bool = False

    def validate(self) -> None:
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigurationError(f"optimizer.kind must be one of {OPTIMIZER_KINDS}")
        if self.learning_rate <= 0:
            raise ConfigurationError("optimizer.learning_rate must be positive")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigurationError("optimizer.decay must be in (0, 1]")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("optimizer.momentum must be in [0, 1)")
        if self.lambda_hat <= 0:
            raise ConfigurationError("optimizer.lambda_hat must be positive")
        if self.mu_hat < 0:
            raise ConfigurationError("optimizer.mu_hat must be non-negative")
        if self.k < 2:
            raise ConfigurationError("optimizer.k must be at least 2")
        if self.batch_size < 1:
            raise ConfigurationError("optimizer.batch_size must be positive")
        if self.force_identical_batches and self.k != 2:
            raise ConfigurationError("force_identical_batches requires k = 2")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 30
    seed: int = 0

    def validate(self) -> "RunConfig":
        self.data.validate()
        self.model.validate()
        self.optimizer.validate()
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _fill_dataclass(cls, values: dict, path: str):
    if not isinstance(values, dict):
        raise ConfigurationError(f"config section {path!r} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in fields:
            raise ConfigurationError(f"unknown config key {path}.{key}" if path else
                                     f"unknown config key {key}")
        f = fields[key]
        sub = f"{path}.{key}" if path else key
        if dataclasses.is_dataclass(f.type) or f.type in ("DataConfig", "ModelConfig", "OptimizerConfig"):
            kwargs[key] = _fill_dataclass(_SECTION_TYPES[key], value, sub)
        else:
            kwargs[key] = _coerce(f, value, sub)
    return cls(**kwargs)


_SECTION_TYPES = {"data": DataConfig, "model": ModelConfig, "optimizer": OptimizerConfig}


def _coerce(f: dataclasses.Field, value, path: str):
    t = f.type
    if t == "bool":
        if not isinstance(value, bool):
            raise ConfigurationError(f"{path} must be a boolean, got {value!r}")
        return value
    if t == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{path} must be an integer, got {value!r}")
        return value
    if t == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{path} must be a number, got {value!r}")
        return float(value)
    if t == "str":
        if not isinstance(value, str):
            raise ConfigurationError(f"{path} must be a string, got {value!r}")
        return value
    if t.startswith("list"):
        if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, int) for v in value):
            raise ConfigurationError(f"{path} must be a list of integers, got {value!r}")
        return [int(v) for v in value]
    raise ConfigurationError(f"unhandled config field type {t} at {path}")


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigurationError("config document must be a mapping")
    return _fill_dataclass(RunConfig, doc, "").validate()


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML: {exc}") from exc
    if doc is None:
        raise ConfigurationError(f"{path}: empty config")
    return config_from_dict(doc)
