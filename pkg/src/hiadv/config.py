"""Run configuration: one JSON document, validated before any work starts."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

BACKBONES = ("graphormer_root", "gat_sum")
DEFAULT_MIXTURE = {"graphormer_root": "root_replace", "gat_sum": "sum"}


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    taxonomy: str = ""
    train: str = ""
    dev: str = ""
    test: str = ""
    output_dir: str = "run"


@dataclass
class ModelConfig:
    d: int = 64
    heads: int = 4
    layers: int = 1
    backbone: str = "graphormer_root"
    mixture: str | None = None
    max_distance: int = 16
    ffn_dim: int | None = None
    oracle_init_std: float = 0.02

    @property
    def effective_mixture(self) -> str:
        return self.mixture or DEFAULT_MIXTURE[self.backbone]

    @property
    def structure_kind(self) -> str:
        return "graphormer" if self.backbone == "graphormer_root" else "gat"


@dataclass
class TrainingConfig:
    batch_size: int = 8
    max_epochs: int = 30
    patience: int = 5
    warmup_epochs: int = 1
    lambda_adv: float = 1.0
    loss: str = "zlpr"
    learning_rate: float = 1e-3
    seed: int = 0
    hiadv: bool = True
    eval_batch_size: int = 64


@dataclass
class InferenceConfig:
    tau: float = 0.5


@dataclass
class AblationConfig:
    mode: str = "full"
    fraction: float = 0.15


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "RunConfig":
        errs = []
        m, t = self.model, self.training

        def need(cond: bool, path: str, msg: str) -> None:
            if not cond:
                errs.append(f"{path}: {msg}")

        need(m.d >= 1, "model.d", "must be >= 1")
        need(m.heads >= 1 and m.d % max(m.heads, 1) == 0, "model.heads", "must divide model.d")
        need(m.layers >= 1, "model.layers", "must be >= 1")
        need(m.backbone in BACKBONES, "model.backbone", f"must be one of {BACKBONES}")
        need(m.mixture in (None, "root_replace", "sum", "concat_project"), "model.mixture",
             "must be null, root_replace, sum or concat_project")
        need(m.max_distance >= 1, "model.max_distance", "must be >= 1")
        need(m.ffn_dim is None or m.ffn_dim >= 1, "model.ffn_dim", "must be >= 1")
        need(m.oracle_init_std >= 0, "model.oracle_init_std", "must be >= 0")
        need(t.batch_size >= 1, "training.batch_size", "must be >= 1")
        need(t.max_epochs >= 1, "training.max_epochs", "must be >= 1")
        need(t.patience >= 1, "training.patience", "must be >= 1")
        need(t.warmup_epochs >= 0, "training.warmup_epochs", "must be >= 0")
        need(t.lambda_adv >= 0, "training.lambda_adv", "must be >= 0")
        need(t.loss in ("zlpr", "bce"), "training.loss", "must be zlpr or bce")
        need(t.learning_rate >= 0, "training.learning_rate", "must be >= 0")
        need(t.eval_batch_size >= 1, "training.eval_batch_size", "must be >= 1")
        need(0 < self.inference.tau < 1, "inference.tau", "must lie in (0, 1)")
        need(self.ablation.mode in ("full", "partial", "none", "wrong"), "ablation.mode",
             "must be full, partial, none or wrong")
        need(0 <= self.ablation.fraction <= 1, "ablation.fraction", "must lie in [0, 1]")
        if errs:
            raise ConfigError("; ".join(errs))
        return self

    def digest(self, section: str = "model") -> str:
        blob = json.dumps(dataclasses.asdict(getattr(self, section)), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _coerce(value: Any, tp: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported type {tp}")


def _build(cls, data: Any, path: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"{where}{unknown[0]}: unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        sub = f"{path}.{f.name}" if path else f.name
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _build(tp, data[f.name], sub)
        else:
            kwargs[f.name] = _coerce(data[f.name], tp, sub)
    return cls(**kwargs)


def config_from_dict(data: Mapping) -> RunConfig:
    return _build(RunConfig, data, "").validate()


def load_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None
    return config_from_dict(data)


def apply_overrides(cfg: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    """Return a new validated config with dotted-path overrides applied."""
    data = cfg.to_dict()
    for key, value in overrides.items():
        parts = key.split(".")
        node = data
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"{key}: unknown key")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"{key}: unknown key")
        node[parts[-1]] = value
    return config_from_dict(data)
