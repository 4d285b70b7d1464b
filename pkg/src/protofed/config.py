"""Federation configuration: schema, file parsing, overrides, validation.

Config files are flat ``key=value`` lines with JSON-compatible values
(strings quoted; ``#`` starts a comment).  Override strings from the CLI use
the same syntax; values that fail JSON parsing are taken as bare strings.
Unknown keys are hard errors.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigNotFoundError, ConfigRangeError

METHODS = ("fedpg", "fedavg", "fedproto-naive")
PARTITIONS = ("louvain", "balanced")
BACKBONES = ("propagated_linear", "message_passing")


@dataclass
class FederationConfig:
    data_dir: str = ""
    method: str = "fedpg"
    partition: str = "louvain"
    num_clients: int = 10
    rounds: int = 20
    local_epochs: int = 3
    server_epochs: int = 100
    participation_ratio: float = 1.0
    # protocol hyperparameters, all in [0,1]
    margin_cap: float = 0.5          # cap on the adaptive margin
    hop_sample_ratio: float = 0.5    # extra cross-hop query sampling ratio
    fusion_weight: float = 0.5       # universal share in personalized fusion
    similarity_threshold: float = 0.5
    proto_loss_weight: float = 0.5   # prototype alignment weight in the local loss
    confidence_threshold: float = 0.8
    # model dimensions
    proto_dim: int = 64
    hidden_dim: int = 64
    scorer_hidden_dim: int = 16
    backbone: str = "propagated_linear"
    num_layers: int = 2
    heterogeneous: bool = False
    max_hops: int = -1               # -1: use the minimum layer count over clients
    # optimization
    client_lr: float = 0.1
    server_lr: float = 0.01
    # prototype noise (privacy mechanism)
    noise_dim_fraction: float = 0.0
    noise_sigma_rel: float = 0.1
    # behavior switches
    literal_normalization: bool = False
    gpg_bypass: bool = False
    dump_prototypes: bool = False
    # sparsity transforms applied to the loaded graph
    feature_keep_ratio: float = 1.0
    edge_keep_ratio: float = 1.0
    label_keep_ratio: float = 1.0
    # seeds
    partition_seed: int = 0
    init_seed: int = 1
    sampling_seed: int = 2
    noise_seed: int = 3


_FRACTION_FIELDS = (
    "margin_cap", "hop_sample_ratio", "fusion_weight", "similarity_threshold",
    "proto_loss_weight", "confidence_threshold", "noise_dim_fraction",
    "feature_keep_ratio", "edge_keep_ratio", "label_keep_ratio",
)

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(FederationConfig)}


def _coerce(key: str, value):
    kind = _FIELD_TYPES[key]
    if kind == "bool":
        if isinstance(value, bool):
            return value
        raise ConfigRangeError(f"{key} must be a boolean, got {value!r}")
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigRangeError(f"{key} must be an integer, got {value!r}")
        if isinstance(value, float) and not value.is_integer():
            raise ConfigRangeError(f"{key} must be an integer, got {value!r}")
        return int(value)
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigRangeError(f"{key} must be a number, got {value!r}")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigRangeError(f"{key} must be a string, got {value!r}")
        return value
    raise AssertionError(f"unhandled field type {kind}")


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip()


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for i, raw in enumerate(text.split("\n"), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigRangeError(f"{source}:{i}: expected key=value, got {raw!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigRangeError(f"{source}:{i}: unknown config key {key!r}")
        values[key] = parse_value(val)
    return values


def apply_overrides(values: dict, overrides) -> dict:
    out = dict(values)
    for item in overrides:
        if "=" not in item:
            raise ConfigRangeError(f"override must be KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigRangeError(f"unknown config key {key!r}")
        out[key] = parse_value(val)
    return out


def validate(cfg: FederationConfig) -> FederationConfig:
    if cfg.method not in METHODS:
        raise ConfigRangeError(f"method must be one of {METHODS}, got {cfg.method!r}")
    if cfg.partition not in PARTITIONS:
        raise ConfigRangeError(f"partition must be one of {PARTITIONS}, got {cfg.partition!r}")
    if cfg.backbone not in BACKBONES:
        raise ConfigRangeError(f"backbone must be one of {BACKBONES}, got {cfg.backbone!r}")
    for key in _FRACTION_FIELDS:
        v = getattr(cfg, key)
        if not 0.0 <= v <= 1.0:
            raise ConfigRangeError(f"{key} must be in [0,1], got {v}")
    if not 0.0 < cfg.participation_ratio <= 1.0:
        raise ConfigRangeError(
            f"participation_ratio must be in (0,1], got {cfg.participation_ratio}")
    for key in ("num_clients", "rounds", "local_epochs"):
        if getattr(cfg, key) < 1:
            raise ConfigRangeError(f"{key} must be >= 1, got {getattr(cfg, key)}")
    if cfg.server_epochs < 0:
        raise ConfigRangeError(f"server_epochs must be >= 0, got {cfg.server_epochs}")
    for key in ("proto_dim", "hidden_dim", "scorer_hidden_dim", "num_layers"):
        if getattr(cfg, key) < 1:
            raise ConfigRangeError(f"{key} must be >= 1, got {getattr(cfg, key)}")
    if cfg.client_lr < 0 or cfg.server_lr < 0:
        raise ConfigRangeError("learning rates must be >= 0")
    if cfg.noise_sigma_rel < 0:
        raise ConfigRangeError(f"noise_sigma_rel must be >= 0, got {cfg.noise_sigma_rel}")
    if cfg.backbone == "message_passing" and not cfg.heterogeneous and cfg.num_layers != 2:
        raise ConfigRangeError("message_passing backbone requires num_layers=2")
    if cfg.method == "fedavg" and cfg.heterogeneous:
        raise ConfigRangeError("fedavg cannot aggregate heterogeneous backbones")
    return cfg


def resolve_config(path=None, overrides=(), seed=None) -> FederationConfig:
    """Pure resolution: (file, overrides) -> validated FederationConfig."""
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigNotFoundError(f"config file not found: {p}")
        values = parse_config_text(p.read_text(encoding="utf-8"), str(p))
    values = apply_overrides(values, overrides)
    if seed is not None:
        for key in ("partition_seed", "init_seed", "sampling_seed", "noise_seed"):
            values[key] = int(seed)
    coerced = {k: _coerce(k, v) for k, v in values.items()}
    try:
        cfg = FederationConfig(**coerced)
    except TypeError as exc:
        raise ConfigRangeError(str(exc)) from exc
    return validate(cfg)


def config_echo(cfg: FederationConfig) -> dict:
    """Resolved config as a plain dict in schema field order."""
    return {f.name: getattr(cfg, f.name) for f in dataclasses.fields(FederationConfig)}
