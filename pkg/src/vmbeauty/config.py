"""Run configuration: one INI file covering model, training and augmentation."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import AugmentConfig
from .mamba import MambaConfig
from .model import ModelConfig, model_config_from_dict, tiny_model_config
from .vit import ViTConfig


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-5
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    precision: str = "f32"
    grad_clip: float = 0.0
    cosine_schedule: bool = False
    keep_last: int = 0
    workers: int = 0
    variant: str = "learned_fusion"
    max_steps: int = 0
    head_bias_init: str = "zero"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.head_bias_init not in ("zero", "target_mean"):
            raise ValueError(f"head_bias_init must be 'zero' or 'target_mean', got {self.head_bias_init!r}")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        return cls(model=model_config_from_dict(d["model"]),
                   train=TrainConfig(**d["train"]),
                   augment=AugmentConfig(**d["augment"]))

    def hash(self) -> str:
        return hashlib.sha256(dump_config(self).encode("utf-8")).hexdigest()[:12]


def tiny_run_config(**train_overrides) -> RunConfig:
    kw = dict(epochs=5, batch_size=8, learning_rate=1e-3, weight_decay=0.0)
    kw.update(train_overrides)
    train = TrainConfig(**kw)
    return RunConfig(model=tiny_model_config(), train=train, augment=AugmentConfig(enabled=False))


def derive_seed(root: int, *names) -> int:
    """Stable sub-seed for a named purpose (``derive_seed(0, "init", 3)``)."""
    key = ":".join([str(root)] + [str(n) for n in names])
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little") >> 1


# -- INI serialization -------------------------------------------------------

_SECTIONS = {
    "model": ModelConfig,
    "vit": ViTConfig,
    "mamba": MambaConfig,
    "train": TrainConfig,
    "augment": AugmentConfig,
}


class ConfigError(ValueError):
    pass


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(_parse(part, default[0]) for part in text.split(","))
    return text


def _flat(section_cls, obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(section_cls)
            if not dataclasses.is_dataclass(getattr(obj, f.name))}


def dump_config(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    objs = {"model": cfg.model, "vit": cfg.model.vit, "mamba": cfg.model.mamba,
            "train": cfg.train, "augment": cfg.augment}
    for name, cls in _SECTIONS.items():
        cp[name] = {k: _format(v) for k, v in _flat(cls, objs[name]).items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Overlay INI ``text`` on ``base`` (defaults); unknown sections/keys are errors."""
    base = base or RunConfig()
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    objs = {"model": base.model, "vit": base.model.vit, "mamba": base.model.mamba,
            "train": base.train, "augment": base.augment}
    updates: dict[str, dict] = {name: {} for name in _SECTIONS}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        defaults = _flat(_SECTIONS[section], objs[section])
        for key, raw in cp[section].items():
            if key not in defaults:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                updates[section][key] = _parse(raw, defaults[key])
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
    try:
        vit = replace(base.model.vit, **updates["vit"])
        mamba = replace(base.model.mamba, **updates["mamba"])
        model = replace(base.model, vit=vit, mamba=mamba, **updates["model"])
        return RunConfig(model=model,
                         train=replace(base.train, **updates["train"]),
                         augment=replace(base.augment, **updates["augment"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))
