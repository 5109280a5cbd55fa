"""Run configuration: a flat YAML mapping validated field by field."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Any

import yaml

from .matching import ORIENTATIONS
from .model import KG_ENCODERS
from .training import SIGMAS


class ConfigError(ValueError):
    def __init__(self, field: str, msg: str):
        super().__init__(f"config field {field!r}: {msg}")
        self.field = field


@dataclass
class RunConfig:
    d_model: int = 64
    num_layers: int = 2
    num_heads: int = 2
    max_hops: int = 2
    lam: float = 10.0
    sigma: str = "tanh"
    drop_mp: float = 0.1
    lr: float = 1e-3
    warmup_steps: int = 0
    rectify: bool = False
    epochs: int = 5
    batch_size: int = 16
    seed: int = 0
    kg_encoder: str = "metapath"
    rpb: bool = True
    rpb_orientation: str = "literal"
    token_cap: int | None = 400
    ffn_mult: int = 4
    embeddings: str | None = None
    embedding_dim: int = 50

    def validate(self) -> RunConfig:
        for f in fields(self):
            _check_type(f.name, getattr(self, f.name), f.type)
        positive = ("d_model", "num_heads", "max_hops", "batch_size", "ffn_mult", "embedding_dim")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        for name in ("num_layers", "warmup_steps", "epochs", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be >= 0")
        if self.d_model % self.num_heads:
            raise ConfigError("num_heads", f"must divide d_model={self.d_model}")
        if self.lam < 0:
            raise ConfigError("lam", "must be >= 0")
        if self.lr < 0:
            raise ConfigError("lr", "must be >= 0")
        if not 0 <= self.drop_mp < 1:
            raise ConfigError("drop_mp", "must be in [0, 1)")
        if self.sigma not in SIGMAS:
            raise ConfigError("sigma", f"must be one of {sorted(SIGMAS)}")
        if self.kg_encoder not in KG_ENCODERS:
            raise ConfigError("kg_encoder", f"must be one of {list(KG_ENCODERS)}")
        if self.rpb_orientation not in ORIENTATIONS:
            raise ConfigError("rpb_orientation", f"must be one of {list(ORIENTATIONS)}")
        if self.token_cap is not None and self.token_cap < 1:
            raise ConfigError("token_cap", "must be >= 1 or null")
        return self

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def updated(self, **changes) -> RunConfig:
        return from_mapping({**self.to_dict(), **changes})


_TYPES = {
    "int": (int,),
    "float": (int, float),
    "str": (str,),
    "bool": (bool,),
    "int | None": (int, type(None)),
    "str | None": (str, type(None)),
}


def _check_type(name: str, value, annotation: str):
    allowed = _TYPES[annotation]
    if isinstance(value, bool) and bool not in allowed:
        raise ConfigError(name, f"expected {annotation}, got bool")
    if not isinstance(value, allowed):
        raise ConfigError(name, f"expected {annotation}, got {type(value).__name__}")


def from_mapping(data: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(str(key), "unknown field")
    cfg = RunConfig(**data)
    if isinstance(cfg.lam, int) and not isinstance(cfg.lam, bool):
        cfg.lam = float(cfg.lam)
    for name in ("drop_mp", "lr"):
        v = getattr(cfg, name)
        if isinstance(v, int) and not isinstance(v, bool):
            setattr(cfg, name, float(v))
    return cfg.validate()


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config file must hold a flat mapping")
    for k, v in data.items():
        if isinstance(v, (dict, list)):
            raise ConfigError(str(k), "nested values are not allowed")
    return from_mapping(data)


def dump_config(cfg: RunConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
