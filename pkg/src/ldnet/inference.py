"""Mean-net, all-listeners and mean-listener inference."""

from __future__ import annotations

from collections import defaultdict
from contextlib import contextmanager
from typing import Mapping, Sequence

import numpy as np
import torch

from ldnet.features import Spectrogram, repetitive_pad
from ldnet.model import LD_FAMILIES, MEAN_NET_FAMILIES, CapabilityError, LDModel, pool_frames

MODES = ("mean_net", "all_listeners", "mean_listener")
ALIASES = {"mn": "mean_net", "all": "all_listeners", "ml": "mean_listener"}


def resolve_mode(mode: str) -> str:
    key = mode.lower()
    key = ALIASES.get(key, key)
    if key not in MODES:
        raise ValueError(f"unknown inference mode {mode!r}; expected one of {MODES} or {tuple(ALIASES)}")
    return key


def check_mode(model: LDModel, mode: str) -> str:
    """Enforce the mode/family compatibility rules; returns the canonical mode name."""
    mode = resolve_mode(mode)
    fam = model.family
    if mode == "mean_net" and fam not in MEAN_NET_FAMILIES:
        raise CapabilityError(f"mean_net inference needs a MeanNet; family {fam} has none")
    if mode == "all_listeners" and fam not in LD_FAMILIES:
        raise CapabilityError(f"all_listeners inference needs an LD-capable model; family {fam} is not")
    if mode == "mean_listener" and fam != "ldnet_ml":
        raise CapabilityError(f"mean_listener inference needs an ldnet_ml model; got {fam}")
    return mode


@contextmanager
def evaluation(model: LDModel):
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            yield model
    finally:
        model.train(was_training)


def _as_batch(spectrogram) -> tuple[torch.Tensor, torch.Tensor]:
    if isinstance(spectrogram, Spectrogram):
        values = torch.from_numpy(spectrogram.values)
    else:
        values = torch.as_tensor(spectrogram, dtype=torch.float32)
    if values.dim() == 2:
        values = values[None]
    counts = torch.full((values.shape[0],), values.shape[1], dtype=torch.long)
    return values, counts


def score_mean_net(model: LDModel, features, frame_counts=None) -> torch.Tensor:
    frames = model.mean_net_forward(features)
    return pool_frames(frames, frame_counts)


def score_all_listeners(model: LDModel, features, frame_counts=None, chunk_size: int | None = 64) -> torch.Tensor:
    """Average LD utterance score over the M real training listeners.

    LI features are computed once and replicated across listeners; ``chunk_size``
    listeners are decoded per pass to bound memory.
    """
    m = model.config.real_listener_count
    if m < 1:
        raise CapabilityError("model has no training listeners")
    b, t = features.shape[:2]
    counts = frame_counts if frame_counts is not None else torch.full((b,), t, dtype=torch.long)
    li = model.encode(features)
    mean_raw = model.mean_net_forward(features, raw=True) if model.family == "mbnet" else None
    chunk = chunk_size or m
    total = torch.zeros(b, dtype=li.dtype)
    for start in range(0, m, chunk):
        idx = torch.arange(start, min(start + chunk, m))
        n = idx.numel()
        li_rep = li.repeat_interleave(n, dim=0)  # item-major: [b0l0, b0l1, ..., b1l0, ...]
        frames = model.decode(li_rep, idx.repeat(b))
        if mean_raw is not None:
            frames = model.clip(mean_raw.repeat_interleave(n, dim=0) + frames)
        utt = pool_frames(frames, counts.repeat_interleave(n)).view(b, n)
        total += utt.sum(dim=1)
    return total / m


def score_mean_listener(model: LDModel, features, frame_counts=None) -> torch.Tensor:
    idx = torch.full((features.shape[0],), model.config.mean_listener_index, dtype=torch.long)
    return model.forward_ld(features, idx, frame_counts).utterance


def score(model: LDModel, features, frame_counts=None, mode: str = "all_listeners", chunk_size: int | None = 64):
    mode = check_mode(model, mode)
    if mode == "mean_net":
        return score_mean_net(model, features, frame_counts)
    if mode == "mean_listener":
        return score_mean_listener(model, features, frame_counts)
    return score_all_listeners(model, features, frame_counts, chunk_size)


def infer_mean_net(model: LDModel, spectrogram) -> float:
    check_mode(model, "mean_net")
    with evaluation(model):
        return float(score_mean_net(model, *_as_batch(spectrogram))[0])


def infer_all_listeners(model: LDModel, spectrogram, chunk_size: int | None = 64) -> float:
    check_mode(model, "all_listeners")
    with evaluation(model):
        return float(score_all_listeners(model, *_as_batch(spectrogram), chunk_size=chunk_size)[0])


def infer_mean_listener(model: LDModel, spectrogram) -> float:
    check_mode(model, "mean_listener")
    with evaluation(model):
        return float(score_mean_listener(model, *_as_batch(spectrogram))[0])


def predict_dataset(model: LDModel, samples: Sequence, features: Mapping[str, Spectrogram], mode: str,
                    batch_size: int = 16, chunk_size: int | None = 64) -> dict[str, float]:
    """Score every sample; items are batched only with others of identical length.

    Grouping by length keeps batched results equal to per-sample calls, since
    no padding frame ever reaches the convolution or recurrent layers.
    """
    mode = check_mode(model, mode)
    by_length: dict[int, list[str]] = defaultdict(list)
    for s in samples:
        sid = s.sample_id if hasattr(s, "sample_id") else s
        by_length[features[sid].n_frames].append(sid)
    out: dict[str, float] = {}
    with evaluation(model):
        for length in sorted(by_length):
            ids = by_length[length]
            for start in range(0, len(ids), batch_size):
                chunk_ids = ids[start:start + batch_size]
                batch = repetitive_pad([features[i] for i in chunk_ids])
                scores = score(model, batch.features, batch.frame_counts, mode, chunk_size)
                out.update(zip(chunk_ids, np.asarray(scores, dtype=np.float64).tolist()))
    return out
