"""Synthetic listening tests with known system qualities and listener biases.

Each system has a latent quality q; each listener a bias b ~ N(0, bias_std^2).
Listener j rates a sample of system s as clamp(q_s + b_j + noise, 1, 5). The
sample's waveform is a harmonic tone whose (fractional) number of partials
grows with q, so a spectrogram model can recover the quality.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from ldnet.dataset import MOSDataset, Rating, Sample, make_dataset, write_dataset
from ldnet.features import repetitive_pad, write_wav
from ldnet.inference import evaluation, predict_dataset, score_all_listeners
from ldnet.metrics import CorrelationError, lcc, srcc, system_aggregate
from ldnet.model import pool_frames


class SynthSpecError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    n_systems: int = 20
    samples_per_system: int = 30
    n_listeners: int = 40
    ratings_per_sample: int = 8
    listener_bias_std: float = 0.5
    rating_noise_std: float = 0.3
    quality_range: tuple[float, float] = (1.5, 4.5)
    seed: int = 0
    holdout_per_system: int = 5  # samples per system in each of valid and test
    duration: float = 1.0
    sample_rate: int = 16000
    max_partials: int = 16
    snr_db: float = 20.0

    def validate(self) -> "SynthSpec":
        lo, hi = self.quality_range
        problems = []
        if min(self.n_systems, self.samples_per_system, self.n_listeners, self.ratings_per_sample) < 1:
            problems.append("counts must be positive")
        if self.ratings_per_sample > self.n_listeners:
            problems.append("ratings_per_sample exceeds n_listeners")
        if not (1.0 <= lo <= hi <= 5.0):
            problems.append(f"quality_range {self.quality_range} not within [1, 5]")
        if self.listener_bias_std < 0 or self.rating_noise_std < 0:
            problems.append("standard deviations must be >= 0")
        if self.holdout_per_system < 0 or 2 * self.holdout_per_system >= self.samples_per_system:
            problems.append("holdout_per_system leaves no training samples")
        if self.duration <= 0 or self.max_partials < 1:
            problems.append("duration and max_partials must be positive")
        if problems:
            raise SynthSpecError("infeasible synthetic spec: " + "; ".join(problems))
        return self


@dataclass
class GroundTruth:
    system_quality: dict[str, float]
    listener_bias: dict[str, float]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)


@dataclass
class SynthResult:
    dataset: MOSDataset
    truth: GroundTruth
    waveforms: dict[str, np.ndarray] = field(repr=False)
    spec: SynthSpec = field(default_factory=SynthSpec)


def partial_count(quality: float, spec: SynthSpec) -> float:
    """Fractional number of harmonics, linear in quality over [1, 5]."""
    return 1.0 + (quality - 1.0) / 4.0 * (spec.max_partials - 1)


def render_waveform(quality: float, rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    n = int(round(spec.duration * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    f0 = rng.uniform(120.0, 240.0)
    k = partial_count(quality, spec)
    full = int(np.floor(k))
    amps = np.ones(full + 1)
    amps[full] = k - full
    phases = rng.uniform(0, 2 * np.pi, full + 1)
    harmonics = np.arange(1, full + 2)
    tone = (0.04 * amps[:, None] * np.sin(2 * np.pi * f0 * harmonics[:, None] * t + phases[:, None])).sum(0)
    # noise at a fixed level relative to a single partial, so total noise does not track quality
    noise_std = 0.04 / np.sqrt(2) * 10 ** (-spec.snr_db / 20)
    return tone + rng.normal(0.0, noise_std, n)


def generate(spec: SynthSpec = SynthSpec(), audio_root: Path | str = "wav") -> SynthResult:
    """Fabricate a listening test; audio paths point under ``audio_root``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    audio_root = Path(audio_root)
    lo, hi = spec.quality_range

    systems = [f"sys{i:03d}" for i in range(spec.n_systems)]
    listeners = [f"lis{j:03d}" for j in range(spec.n_listeners)]
    quality = {s: float(q) for s, q in zip(systems, rng.uniform(lo, hi, spec.n_systems))}
    bias = {l: float(b) for l, b in zip(listeners, rng.normal(0.0, spec.listener_bias_std, spec.n_listeners))}

    samples, ratings, waves = [], [], {}
    h = spec.holdout_per_system
    for s in systems:
        splits = ["valid"] * h + ["test"] * h + ["train"] * (spec.samples_per_system - 2 * h)
        for k, split in enumerate(rng.permutation(splits)):
            sid = f"{s}_utt{k:03d}"
            samples.append(Sample(sid, s, audio_root / f"{sid}.wav", str(split)))
            waves[sid] = render_waveform(quality[s], rng, spec)
            raters = rng.choice(spec.n_listeners, spec.ratings_per_sample, replace=False)
            noise = rng.normal(0.0, spec.rating_noise_std, spec.ratings_per_sample)
            for j, eps in zip(sorted(raters), noise):
                score = float(np.clip(quality[s] + bias[listeners[j]] + eps, 1.0, 5.0))
                ratings.append(Rating(sid, listeners[j], score))

    dataset = make_dataset(samples, ratings)
    return SynthResult(dataset, GroundTruth(quality, bias), waves, spec)


def write_synth(result: SynthResult, out_dir) -> dict[str, Path]:
    """Write ratings.csv, splits.csv, truth.json and one WAV per sample."""
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    paths = {"ratings": out_dir / "ratings.csv", "splits": out_dir / "splits.csv", "truth": out_dir / "truth.json"}
    samples = {}
    for sid, sample in result.dataset.samples.items():
        samples[sid] = replace(sample, audio_path=wav_dir / f"{sid}.wav")
        write_wav(samples[sid].audio_path, result.waveforms[sid], result.spec.sample_rate)
    write_dataset(replace(result.dataset, samples=samples), paths["ratings"], paths["splits"], audio_root=out_dir)
    paths["truth"].write_text(result.truth.to_json())
    return paths


# ----------------------------------------------------------------------------- oracle checks


@dataclass
class OracleReport:
    system_srcc: float
    bias_pearson: float | None
    offset_std: float
    offsets: dict[str, float] = field(repr=False, default_factory=dict)


def listener_offsets(model, dataset, features, samples, reference: str = "auto") -> dict[str, float]:
    """Mean over ``samples`` of f(x, l_j) - f(x, reference) for each training listener.

    The reference is the mean listener when present, else the all-listeners average.
    """
    reg = dataset.registry
    m = model.config.real_listener_count
    if m != reg.n_listeners:
        raise ValueError(f"model has {m} listeners but the registry has {reg.n_listeners}")
    use_ml = model.family == "ldnet_ml" if reference == "auto" else reference == "mean_listener"
    sums = np.zeros(m)
    with evaluation(model):
        for s in samples:
            batch = repetitive_pad([features[s.sample_id]])
            li = model.encode(batch.features)
            idx = torch.arange(m)
            frames = model.decode(li.expand(m, -1, -1), idx)
            if model.family == "mbnet":
                mean_raw = model.mean_net_forward(batch.features, raw=True)
                frames = model.clip(mean_raw.expand(m, -1) + frames)
            per_listener = pool_frames(frames).numpy()
            if use_ml:
                ref = float(model.forward_ld(batch.features, torch.tensor([model.config.mean_listener_index])).utterance)
            else:
                ref = float(score_all_listeners(model, batch.features))
            sums += per_listener - ref
    return {name: float(v / len(samples)) for name, v in zip(reg.names, sums)}


def oracle_checks(model, result: SynthResult, features, split: str = "test", mode: str | None = None) -> OracleReport:
    """System-ranking SRCC against true qualities and listener-offset correlation with true biases."""
    dataset = result.dataset
    samples = dataset.split(split)
    if mode is None:
        mode = "mean_listener" if model.family == "ldnet_ml" else (
            "mean_net" if model.family == "mosnet" else "all_listeners")
    preds = predict_dataset(model, samples, features, mode)
    sys_pred = system_aggregate(preds, dataset.system_map())
    systems = sorted(sys_pred)
    try:
        sys_srcc = srcc([sys_pred[s] for s in systems], [result.truth.system_quality[s] for s in systems])
    except CorrelationError:
        sys_srcc = float("nan")

    if model.family == "mosnet":
        return OracleReport(sys_srcc, None, 0.0)
    offsets = listener_offsets(model, dataset, features, samples)
    names = sorted(offsets)
    off = np.array([offsets[n] for n in names])
    true = np.array([result.truth.listener_bias[n] for n in names])
    try:
        pearson = lcc(off, true)
    except CorrelationError:
        pearson = None
    return OracleReport(sys_srcc, pearson, float(np.std(off)), offsets)
