"""Training losses, each with an utterance term and a per-frame term."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from ldnet.model import Scores, pool_frames


@dataclass
class ObjectiveConfig:
    alpha: float = 1.0
    lam: float = 4.0
    clip_tau: float = 0.25
    frame_loss_weight: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.lam < 0:
            raise ValueError("alpha and lambda must be non-negative")
        if self.clip_tau < 0 or self.frame_loss_weight < 0:
            raise ValueError("clip_tau and frame_loss_weight must be non-negative")


def clipped_mse(pred: torch.Tensor, target: torch.Tensor, tau: float, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean of squared errors, with errors no larger than ``tau`` counted as zero.

    ``mask`` selects the elements that enter the mean (padding frames excluded).
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    pred = torch.as_tensor(pred, dtype=torch.float32) if not torch.is_tensor(pred) else pred
    target = torch.as_tensor(target, dtype=pred.dtype).expand_as(pred)
    diff = pred - target
    sq = (diff.abs() > tau).to(diff.dtype) * diff.square()
    if mask is None:
        return sq.mean()
    mask = mask.to(sq.dtype)
    return (sq * mask).sum() / mask.sum()


def frame_mask(frames: torch.Tensor, frame_counts: torch.Tensor | None) -> torch.Tensor | None:
    if frame_counts is None:
        return None
    return torch.arange(frames.shape[1], device=frames.device)[None, :] < frame_counts[:, None]


def _utterance_and_frames(pred: Scores, target: torch.Tensor, config: ObjectiveConfig, frame_counts):
    loss = clipped_mse(pred.utterance, target, config.clip_tau)
    if config.frame_loss_weight:
        frame_target = target[:, None].expand_as(pred.frames)
        loss = loss + config.frame_loss_weight * clipped_mse(
            pred.frames, frame_target, config.clip_tau, frame_mask(pred.frames, frame_counts)
        )
    return loss


def loss_mean(pred: Scores, mean_target: torch.Tensor, config: ObjectiveConfig, frame_counts=None) -> torch.Tensor:
    return _utterance_and_frames(pred, mean_target, config, frame_counts)


def loss_ld(pred: Scores, ld_target: torch.Tensor, config: ObjectiveConfig, frame_counts=None) -> torch.Tensor:
    return _utterance_and_frames(pred, ld_target, config, frame_counts)


def loss_mbnet(mean_pred: Scores, ld_pred: Scores, mean_target, ld_target, config: ObjectiveConfig,
               frame_counts=None, terms: dict | None = None) -> torch.Tensor:
    """alpha * mean loss + lambda * bias loss; ``ld_pred`` is the MeanNet + BiasNet sum."""
    l_mean = loss_mean(mean_pred, mean_target, config, frame_counts)
    l_bias = loss_ld(ld_pred, ld_target, config, frame_counts)
    if terms is not None:
        terms.update(mean=l_mean.item(), bias=l_bias.item())
    return config.alpha * l_mean + config.lam * l_bias


def loss_ldnet_mn(mean_pred: Scores, ld_pred: Scores, mean_target, ld_target, config: ObjectiveConfig,
                  frame_counts=None, terms: dict | None = None) -> torch.Tensor:
    """alpha * MTL loss (MeanNet on encoder features) + lambda * LD loss."""
    l_mtl = loss_mean(mean_pred, mean_target, config, frame_counts)
    l_ld = loss_ld(ld_pred, ld_target, config, frame_counts)
    if terms is not None:
        terms.update(mtl=l_mtl.item(), ld=l_ld.item())
    return config.alpha * l_mtl + config.lam * l_ld


def training_loss(model, batch, config: ObjectiveConfig, terms: dict | None = None) -> torch.Tensor:
    """Family-specific objective for one batch of (sample, listener, score) triples."""
    fam = model.family
    counts = batch.frame_counts
    if fam == "mosnet":
        loss = loss_mean(model.forward_ld(batch.features, frame_counts=counts), batch.mean_targets, config, counts)
        if terms is not None:
            terms["mean"] = loss.item()
        return loss
    if fam == "mbnet":
        mean_raw = model.mean_net_forward(batch.features, raw=True)
        mean_frames = model.clip(mean_raw)
        ld_frames = model.clip(mean_raw + model.bias_net_forward(batch.features, batch.listener_indices))
        return loss_mbnet(Scores(mean_frames, pool_frames(mean_frames, counts)),
                          Scores(ld_frames, pool_frames(ld_frames, counts)),
                          batch.mean_targets, batch.ld_targets, config, counts, terms)
    if fam == "ldnet_mn":
        li = model.encode(batch.features)
        mean_frames = model.mean_net_forward(li=li)
        ld_frames = model.decode(li, batch.listener_indices)
        return loss_ldnet_mn(Scores(mean_frames, pool_frames(mean_frames, counts)),
                             Scores(ld_frames, pool_frames(ld_frames, counts)),
                             batch.mean_targets, batch.ld_targets, config, counts, terms)
    loss = loss_ld(model.forward_ld(batch.features, batch.listener_indices, counts), batch.ld_targets, config, counts)
    if terms is not None:
        terms["ld"] = loss.item()
    return loss
