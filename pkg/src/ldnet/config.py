"""INI run configuration: one section per module, ``section.key=value`` overrides."""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ldnet.features import FeatureConfig
from ldnet.model import ModelConfig
from ldnet.objectives import ObjectiveConfig
from ldnet.trainer import TrainConfig, recipe


class RunConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    ratings: str = ""
    splits: str = ""
    audio_root: str = ""
    preset: str = "default"


@dataclass
class InferenceConfig:
    mode: str = ""  # empty: the trainer's selection mode
    batch_size: int = 16
    chunk_size: int = 64


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    trainer: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)


SECTIONS = ("data", "features", "model", "objective", "trainer", "inference")
# config-file key -> dataclass field, where they differ
_KEY_ALIASES = {("objective", "lambda"): "lam"}
_FIELD_KEYS = {("objective", "lam"): "lambda"}


def _convert(type_str: str, raw: str):
    raw = raw.strip()
    if "None" in type_str and raw.lower() in ("", "none"):
        return None
    base = type_str.replace("| None", "").strip()
    if base == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if base == "int":
        return int(raw)
    if base == "float":
        return float(raw)
    if base.startswith("tuple[int"):
        return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
    return raw


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _apply(cfg: RunConfig, section: str, key: str, raw: str):
    if section not in SECTIONS:
        raise RunConfigError(f"unknown config section [{section}]")
    name = _KEY_ALIASES.get((section, key), key)
    obj = getattr(cfg, section)
    types = {f.name: f.type for f in dataclasses.fields(obj)}
    if name not in types:
        raise RunConfigError(f"unknown key {section}.{key}")
    try:
        value = _convert(str(types[name]), raw)
    except ValueError as exc:
        raise RunConfigError(f"bad value for {section}.{key}: {exc}") from None
    setattr(cfg, section, dataclasses.replace(obj, **{name: value}))


def parse_override(text: str) -> tuple[str, str, str]:
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise RunConfigError(f"override must look like section.key=value, got {text!r}")
    lhs, value = text.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    return section, key, value


def load_run_config(path=None, overrides: Sequence[str] = ()) -> RunConfig:
    """Resolve defaults, then the config file, then overrides.

    Trainer defaults come from the model's encoder recipe unless set explicitly.
    """
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise RunConfigError(f"config file not found: {path}")
        parser.read(path, encoding="utf-8")
    entries = [(s, k, v) for s in parser.sections() for k, v in parser.items(s)]
    entries += [parse_override(o) for o in overrides]

    cfg = RunConfig()
    for section, key, value in entries:
        if section == "model":
            _apply(cfg, section, key, value)
    cfg.trainer = recipe(cfg.model)
    for section, key, value in entries:
        if section != "model":
            _apply(cfg, section, key, value)
    try:
        cfg.model.validate(require_listeners=False)
        cfg.trainer.validate()
        ObjectiveConfig(**dataclasses.asdict(cfg.objective))
    except ValueError as exc:
        raise RunConfigError(str(exc)) from None
    return cfg


def dump_run_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for section in SECTIONS:
        obj = getattr(cfg, section)
        parser[section] = {
            _FIELD_KEYS.get((section, f.name), f.name): _format(getattr(obj, f.name))
            for f in dataclasses.fields(obj)
        }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
