"""Flat run configuration and its ``key = value`` file format."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    seed: int
    # scene generation / dataset split
    gen_extent: float = 50.0
    gen_max_agents: int = 16
    gen_max_map: int = 8
    data_train: int = 256
    data_val: int = 64
    # model dimensions
    model_d: int = 64
    model_H: int = 32
    model_W: int = 32
    model_d_bev: int = 16
    model_layers: int = 2
    model_heads: int = 1
    model_hidden: int = 64
    # loss weights
    loss_plan: float = 1.0
    loss_motion: float = 0.5
    loss_det: float = 0.5
    loss_map: float = 0.5
    loss_itm: float = 0.5
    loss_itg: float = 0.5
    # optimisation
    optim_lr: float = 1e-3
    optim_weight_decay: float = 0.01
    optim_beta1: float = 0.9
    optim_beta2: float = 0.999
    optim_eps: float = 1e-8
    optim_epochs: int = 40
    optim_pretrain_epochs: int = 20
    optim_batch_size: int = 8
    optim_max_steps: int = 0  # 0 = no cap
    # ablation flags and modes
    tgm_enabled: bool = True
    lgam_enabled: bool = True
    describer_mode: str = "ald"
    eval_mode: str = "at_horizon"

    def __post_init__(self):
        for f in fields(self):
            if f.name.startswith("loss_") and getattr(self, f.name) < 0:
                raise ConfigError(f"{key_of(f.name)} must be >= 0")
        if self.describer_mode not in ("ald", "gld"):
            raise ConfigError(f"describer.mode must be ald or gld, got {self.describer_mode!r}")
        if self.eval_mode not in ("at_horizon", "avg_up_to"):
            raise ConfigError(f"eval.mode must be at_horizon or avg_up_to, got {self.eval_mode!r}")
        for name in ("model_d", "model_H", "model_W", "model_d_bev", "model_heads", "model_hidden",
                     "optim_batch_size", "gen_max_agents", "gen_max_map"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{key_of(name)} must be >= 1")
        if self.model_d % self.model_heads:
            raise ConfigError("model.d must be divisible by model.heads")
        if self.optim_lr <= 0 or self.optim_epochs < 0 or self.optim_pretrain_epochs < 0:
            raise ConfigError("optimizer settings out of range")

    def replace(self, **kw) -> "Config":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key_of(f.name)} = {v}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    def without_lgam(self) -> "Config":
        return self.replace(lgam_enabled=False, loss_itm=0.0, loss_itg=0.0)


def key_of(attr: str) -> str:
    return attr.replace("_", ".", 1)


_ATTRS = {key_of(f.name): f for f in fields(Config)}


def _coerce(key: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw.strip("\"'")
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from exc


def parse_config(text: str, source: str = "<config>") -> Config:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in _ATTRS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        f = _ATTRS[key]
        values[f.name] = _coerce(key, raw, f.type)
    if "seed" not in values:
        raise ConfigError(f"{source}: 'seed' is mandatory")
    try:
        return Config(**values)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path) -> Config:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))
