"""Self-describing checkpoint files."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from ldnet.dataset import ListenerRegistry
from ldnet.features import FeatureConfig
from ldnet.model import LDModel, ModelConfig

FORMAT_TAG = "ldnet-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: LDModel
    registry: ListenerRegistry
    step: int
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, model: LDModel, registry: ListenerRegistry, step: int,
                    feature_config: FeatureConfig | None = None, extra: dict | None = None, state_dict=None):
    payload = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "registry": registry.to_dict(),
        "feature_config": asdict(feature_config or FeatureConfig()),
        "step": int(step),
        "state_dict": state_dict if state_dict is not None else model.state_dict(),
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path) -> Checkpoint:
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises several unrelated types for bad files
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path} is not an {FORMAT_TAG} file")
    if payload.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    model = LDModel(ModelConfig(**payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return Checkpoint(
        model=model,
        registry=ListenerRegistry.from_dict(payload["registry"]),
        step=payload["step"],
        feature_config=FeatureConfig(**payload["feature_config"]),
        extra=payload.get("extra", {}),
    )
