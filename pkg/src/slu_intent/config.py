"""Flat ``key = value`` run configuration files."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from .model import ConfigError, ModelConfig, _coerce


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def format_kv(d: dict) -> str:
    lines = []
    for key, value in d.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif value is None:
            value = ""
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


@dataclass
class TrainHyperparams:
    epochs: int = 15
    batch_size: int = 32
    lr: float = 0.001
    optimizer: str = "adam"
    clip_norm: float = 5.0
    ss_midpoint: float = 5.0
    ss_steepness: float = 1.0
    ss_floor: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


PATH_KEYS = ("train_manifest", "valid_manifest", "cache_dir")


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainHyperparams
    paths: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, d: dict) -> "RunConfig":
        model_keys = {f.name for f in fields(ModelConfig)}
        train_fields = {f.name: f for f in fields(TrainHyperparams)}
        model_part, train_part, paths = {}, {}, {}
        for key, value in d.items():
            if key in model_keys:
                model_part[key] = value
            elif key in PATH_KEYS:
                if value:
                    paths[key] = str(value)
            elif key in train_fields:
                train_part[key] = _coerce(key, value, train_fields[key].default)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return cls(ModelConfig.from_mapping(model_part), TrainHyperparams(**train_part), paths)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls.from_mapping(parse_kv(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def to_dict(self) -> dict:
        return {**self.model.to_dict(), **asdict(self.train), **{k: self.paths[k] for k in PATH_KEYS if k in self.paths}}

    def to_text(self) -> str:
        return format_kv(self.to_dict())
