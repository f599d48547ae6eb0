"""Training configuration and flat dotted-key config files."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Mapping


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1.0
    mu: float = 1.0
    delta: float = 0.5
    lr: float = 1e-3
    epochs_pretrain_ae: int = 100
    epochs_pretrain_trans: int = 100
    epochs_pretrain_mi: int = 50
    epochs_finetune: int = 300
    batch_size: int = 8
    seed: int = 0
    d_hidden: int = 16
    k: int = 8
    enc_layers: int = 2
    heads: int = 4
    blocks: int = 2
    d_k: int = 16
    d_v: int = 16
    mlp_hidden: int = 32
    trans_hidden: int = 64
    mi_hidden: int = 64
    aggregation: str = "mean"
    readout: str = "mean"
    position_transform: str = "reciprocal"
    link_activation: str = "sigmoid"
    mi_normalize: bool = True
    shared_embedding: bool = False
    no_position: bool = False
    no_mi: bool = False
    no_attention: bool = False

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0:
            raise ConfigError("lambda and mu must be non-negative")
        if not 0 < self.delta <= 1:
            raise ConfigError(f"delta must lie in (0, 1], got {self.delta}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        for f in ("epochs_pretrain_ae", "epochs_pretrain_trans", "epochs_pretrain_mi", "epochs_finetune"):
            if getattr(self, f) < 0:
                raise ConfigError(f"{f} must be >= 0")
        for f in ("batch_size", "d_hidden", "k", "enc_layers", "heads", "d_k", "d_v",
                  "mlp_hidden", "trans_hidden", "mi_hidden"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be >= 1")
        if self.blocks < 0:
            raise ConfigError("blocks must be >= 0")
        _choice("aggregation", self.aggregation, ("mean", "sum"))
        _choice("readout", self.readout, ("mean", "sum"))
        _choice("position_transform", self.position_transform, ("reciprocal", "raw"))
        _choice("link_activation", self.link_activation, ("sigmoid", "softmax"))

    @property
    def effective_mu(self) -> float:
        return 0.0 if self.mi_disabled else self.mu

    @property
    def mi_disabled(self) -> bool:
        return self.no_mi or self.shared_embedding

    def with_(self, **kw) -> TrainConfig:
        return replace(self, **kw)

    def to_flat(self) -> dict[str, Any]:
        d = asdict(self)
        return {key: d[attr] for key, attr in KEYS.items()}


def _choice(name, value, allowed):
    if value not in allowed:
        raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")


# flat dotted key -> TrainConfig attribute
KEYS: dict[str, str] = {
    "lambda": "lam",
    "mu": "mu",
    "delta": "delta",
    "lr": "lr",
    "seed": "seed",
    "batch_size": "batch_size",
    "epochs.pretrain_ae": "epochs_pretrain_ae",
    "epochs.pretrain_trans": "epochs_pretrain_trans",
    "epochs.pretrain_mi": "epochs_pretrain_mi",
    "epochs.finetune": "epochs_finetune",
    "dims.d_hidden": "d_hidden",
    "dims.k": "k",
    "dims.enc_layers": "enc_layers",
    "dims.heads": "heads",
    "dims.blocks": "blocks",
    "dims.d_k": "d_k",
    "dims.d_v": "d_v",
    "dims.mlp_hidden": "mlp_hidden",
    "dims.trans_hidden": "trans_hidden",
    "dims.mi_hidden": "mi_hidden",
    "model.aggregation": "aggregation",
    "model.readout": "readout",
    "model.position_transform": "position_transform",
    "model.link_activation": "link_activation",
    "model.mi_normalize": "mi_normalize",
    "ablation.shared_embedding": "shared_embedding",
    "ablation.no_position": "no_position",
    "ablation.no_mi": "no_mi",
    "ablation.no_attention": "no_attention",
}

_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, value: Any) -> Any:
    kind = _TYPES[KEYS[key]]
    try:
        if kind == "bool":
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "1", "yes", "false", "0", "no"):
                return value.lower() in ("true", "1", "yes")
            raise ValueError
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if not isinstance(value, str):
            raise ValueError
        return value
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: expected {kind}, got {value!r}") from None


def apply_overrides(cfg: TrainConfig, overrides: Mapping[str, Any]) -> TrainConfig:
    changes = {}
    for key, value in overrides.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        changes[KEYS[key]] = _coerce(key, value)
    try:
        return replace(cfg, **changes)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:  # pragma: no cover
        raise ConfigError(str(exc)) from None


def load_config_file(path) -> dict[str, Any]:
    if path is None:
        return {}
    with open(path) as fh:
        text = fh.read()
    if not text.strip():
        return {}
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected a flat object of dotted keys")
    return obj


def resolve_config(path=None, overrides: Mapping[str, Any] | None = None,
                   base: TrainConfig | None = None) -> TrainConfig:
    """defaults <- file <- overrides, in increasing precedence."""
    cfg = base or TrainConfig()
    cfg = apply_overrides(cfg, load_config_file(path))
    return apply_overrides(cfg, overrides or {})


def write_config(cfg: TrainConfig, path, extra: Mapping[str, Any] | None = None) -> None:
    obj = cfg.to_flat()
    if extra:
        obj.update(extra)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
