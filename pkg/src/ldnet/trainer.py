"""Optimization loop, validation-based checkpoint selection, multi-seed runs."""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import torch

from ldnet.checkpoint import save_checkpoint
from ldnet.dataset import MOSDataset, extend_with_mean_listener, iterate_training_triples
from ldnet.features import collate
from ldnet.inference import MODES, check_mode, predict_dataset
from ldnet.metrics import CorrelationError, EvalReport, aggregate_seeds, evaluate_split
from ldnet.model import CapabilityError, LDModel, ModelConfig, build_model
from ldnet.objectives import ObjectiveConfig, training_loss

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    total_steps: int = 100_000
    optimizer: str = "rmsprop"
    base_lr: float = 1e-3
    lr_decay_factor: float | None = 0.97
    lr_decay_every: int | None = 1000
    batch_size: int = 24
    validate_every: int = 1000
    seeds: tuple[int, ...] = (1, 2, 3)
    inference_mode_for_selection: str = "all_listeners"
    grad_clip_norm: float | None = 5.0
    # RMSprop constants are torch defaults
    rmsprop_alpha: float = 0.99
    rmsprop_eps: float = 1e-8
    rmsprop_momentum: float = 0.0
    log_every: int = 100
    keep_checkpoints: bool = True

    def validate(self) -> "TrainConfig":
        if self.total_steps <= 0:
            raise ValueError("total_steps must be > 0")
        if self.optimizer not in ("adam", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_decay_factor is not None:
            if not (0 < self.lr_decay_factor <= 1):
                raise ValueError("lr_decay_factor must be in (0, 1]")
            if not self.lr_decay_every or self.lr_decay_every <= 0:
                raise ValueError("lr_decay_every must be > 0 when decay is set")
        if self.batch_size <= 0 or self.validate_every <= 0:
            raise ValueError("batch_size and validate_every must be > 0")
        return self


def recipe(model_config: ModelConfig) -> TrainConfig:
    """Default optimizer schedule for the model's encoder."""
    if model_config.family == "ldnet_ml":
        mode = "mean_listener"
    elif model_config.family == "mosnet":
        mode = "mean_net"
    else:
        mode = "all_listeners"
    if model_config.encoder == "mobilenet_v2":
        return TrainConfig(100_000, "rmsprop", 1e-3, 0.9, 5000, inference_mode_for_selection=mode)
    if model_config.encoder == "mobilenet_v3":
        return TrainConfig(100_000, "rmsprop", 1e-3, 0.97, 1000, inference_mode_for_selection=mode)
    return TrainConfig(50_000, "adam", 1e-3, None, None, inference_mode_for_selection=mode)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Learning rate after ``step`` completed steps."""
    if cfg.lr_decay_factor is None:
        return cfg.base_lr
    return cfg.base_lr * cfg.lr_decay_factor ** (step // cfg.lr_decay_every)


def make_optimizer(params, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.base_lr)
    return torch.optim.RMSprop(params, lr=cfg.base_lr, alpha=cfg.rmsprop_alpha, eps=cfg.rmsprop_eps,
                               momentum=cfg.rmsprop_momentum)


def prepare(model_config: ModelConfig, dataset: MOSDataset) -> tuple[ModelConfig, MOSDataset]:
    """Size the listener embedding to the dataset, adding the mean listener for ldnet_ml."""
    if model_config.family == "ldnet_ml" and not dataset.has_mean_listener:
        dataset = extend_with_mean_listener(dataset)
    if model_config.family == "mosnet":
        return replace(model_config, listener_count=0), dataset
    return replace(model_config, listener_count=dataset.registry.embedding_rows), dataset


def triple_stream(dataset: MOSDataset, seed: int) -> Iterator:
    epoch = 0
    while True:
        yield from iterate_training_triples(dataset, seed * 1_000_003 + epoch)
        epoch += 1


@dataclass
class TrainResult:
    model: LDModel
    best_step: int
    best_srcc: float
    best_report: EvalReport | None
    log: list[dict] = field(default_factory=list)


def validate(model: LDModel, dataset: MOSDataset, features, mode: str, split: str = "valid"):
    preds = predict_dataset(model, dataset.split(split), features, mode)
    try:
        return evaluate_split(preds, dataset, split, strict=True)
    except CorrelationError:
        # constant predictions early in training; never selected
        return None


def train(model: LDModel, dataset: MOSDataset, objective: ObjectiveConfig, cfg: TrainConfig, features,
          seed: int = 0, run_dir=None) -> TrainResult:
    """Train ``model`` in place and return it loaded with the best validation checkpoint."""
    cfg.validate()
    mode = check_mode(model, cfg.inference_mode_for_selection)
    if not dataset.split("train") or not dataset.split("valid"):
        raise ValueError("training needs non-empty train and valid splits")
    run_dir = Path(run_dir) if run_dir is not None else None
    feature_cfg = getattr(features, "cfg", None)

    torch.manual_seed(seed)
    opt = make_optimizer(model.parameters(), cfg)
    sched = (torch.optim.lr_scheduler.StepLR(opt, cfg.lr_decay_every, cfg.lr_decay_factor)
             if cfg.lr_decay_factor is not None else None)
    stream = triple_stream(dataset, seed)
    means = dataset.mean_scores

    best_srcc, best_step, best_state, best_report = -math.inf, 0, None, None
    log: list[dict] = []
    running, n_running = {}, 0
    t0 = time.time()
    model.train()
    for step in range(1, cfg.total_steps + 1):
        items = [next(stream) for _ in range(cfg.batch_size)]
        batch = collate([features[s.sample_id] for s, _, _ in items],
                        listener_indices=[li for _, li, _ in items],
                        ld_targets=[score for _, _, score in items],
                        mean_targets=[means[s.sample_id] for s, _, _ in items])
        terms: dict = {}
        loss = training_loss(model, batch, objective, terms)
        if not torch.isfinite(loss):
            raise DivergenceError(step, loss.item())
        opt.zero_grad()
        loss.backward()
        if cfg.grad_clip_norm:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip_norm)
        lr = opt.param_groups[0]["lr"]
        opt.step()
        if sched is not None:
            sched.step()

        terms["loss"] = loss.item()
        for k, v in terms.items():
            running[k] = running.get(k, 0.0) + v
        n_running += 1

        row = None
        if step % cfg.log_every == 0 or step % cfg.validate_every == 0 or step == cfg.total_steps:
            row = {"step": step, "lr": lr, **{k: v / n_running for k, v in running.items()}}
            running, n_running = {}, 0
        if step % cfg.validate_every == 0 or step == cfg.total_steps:
            report = validate(model, dataset, features, mode)
            srcc_value = report.system.srcc if report is not None else float("nan")
            row.update({f"valid.{k}": v for k, v in report.flat().items()} if report else {"valid.system.srcc": srcc_value})
            if report is not None and srcc_value > best_srcc:
                best_srcc, best_step, best_report = srcc_value, step, report
                best_state = copy.deepcopy(model.state_dict())
            if run_dir is not None and cfg.keep_checkpoints:
                save_checkpoint(run_dir / "checkpoints" / f"step_{step:07d}.ckpt", model, dataset.registry, step,
                                feature_cfg)
            logger.info("seed %d step %d loss %.4f lr %.2e valid sys-SRCC %.4f (%.0fs)",
                        seed, step, row["loss"], lr, srcc_value, time.time() - t0)
        if row is not None:
            log.append(row)

    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        best_step = cfg.total_steps
    model.eval()
    if run_dir is not None:
        save_checkpoint(run_dir / "best.ckpt", model, dataset.registry, best_step, feature_cfg,
                        extra={"valid_system_srcc": best_srcc, "seed": seed})
        write_log(run_dir / "log.csv", log)
    return TrainResult(model, best_step, best_srcc, best_report, log)


def write_log(path, log: Sequence[dict]):
    keys = list(dict.fromkeys(k for row in log for k in row))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, keys)
        w.writeheader()
        w.writerows(log)


def compatible_modes(model_config: ModelConfig) -> list[str]:
    probe = build_model(replace(model_config, listener_count=max(model_config.listener_count, 2)))
    modes = []
    for mode in MODES:
        try:
            check_mode(probe, mode)
        except CapabilityError:
            continue
        modes.append(mode)
    return modes


@dataclass
class SeedRunResult:
    per_seed: dict[int, dict[str, EvalReport]]
    aggregate: dict[str, EvalReport]
    results: dict[int, TrainResult]


def run_seeds(model_config: ModelConfig, dataset: MOSDataset, objective: ObjectiveConfig, cfg: TrainConfig,
              features, seeds: Sequence[int] | None = None, run_root=None, modes: Sequence[str] | None = None,
              split: str = "test") -> SeedRunResult:
    """Train one model per seed, evaluate each best checkpoint, and average the reports."""
    seeds = list(seeds if seeds is not None else cfg.seeds)
    if not seeds:
        raise ValueError("run_seeds needs at least one seed")
    model_config, dataset = prepare(model_config, dataset)
    modes = list(modes) if modes is not None else compatible_modes(model_config)
    per_seed, results = {}, {}
    for seed in seeds:
        run_dir = Path(run_root) / f"seed{seed}" if run_root is not None else None
        model = build_model(model_config, seed)
        try:
            result = train(model, dataset, objective, cfg, features, seed, run_dir)
        except Exception as exc:
            raise RuntimeError(f"training failed for seed {seed}: {exc}") from exc
        results[seed] = result
        per_seed[seed] = {
            mode: evaluate_split(predict_dataset(result.model, dataset.split(split), features, mode), dataset, split)
            for mode in modes
        }
    aggregate = {mode: aggregate_seeds([per_seed[s][mode] for s in seeds]) for mode in modes}
    return SeedRunResult(per_seed, aggregate, results)
