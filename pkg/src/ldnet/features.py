"""Waveform loading, magnitude spectrograms, and repetitive-padding batches."""

from __future__ import annotations

import hashlib
import logging
import os
import re
import struct
from dataclasses import dataclass
from math import gcd
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.io.wavfile
import scipy.signal
import torch

logger = logging.getLogger(__name__)

CACHE_ENV = "LDNET_CACHE_DIR"


class AudioError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    n_fft: int = 512
    hop_length: int = 256
    window: str = "hann"

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


@dataclass(frozen=True)
class Spectrogram:
    values: np.ndarray  # [T, F], float32, >= 0
    frame_rate: float

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]


@dataclass
class Batch:
    features: torch.Tensor  # [B, T_max, F]
    frame_counts: torch.Tensor  # [B]
    listener_indices: torch.Tensor | None = None
    ld_targets: torch.Tensor | None = None
    mean_targets: torch.Tensor | None = None

    def __len__(self):
        return self.features.shape[0]


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a mono WAV file as float64 samples in [-1, 1]."""
    path = Path(path)
    try:
        sr, data = scipy.io.wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise AudioError(f"cannot read audio {path}: {exc}") from exc
    if data.ndim > 1:
        raise AudioError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        signal = data / 32768.0
    elif data.dtype == np.int32:
        signal = data / 2147483648.0
    elif data.dtype == np.uint8:
        signal = (data.astype(np.float64) - 128.0) / 128.0
    else:
        signal = data.astype(np.float64)
    if signal.size == 0:
        raise AudioError(f"{path}: empty audio")
    return signal, int(sr)


def write_wav(path, signal: np.ndarray, sample_rate: int):
    pcm = np.clip(np.round(np.asarray(signal) * 32767.0), -32768, 32767).astype(np.int16)
    scipy.io.wavfile.write(path, sample_rate, pcm)


def resample(signal: np.ndarray, sr_in: int, sr_out: int) -> np.ndarray:
    if sr_in == sr_out:
        return signal
    g = gcd(sr_in, sr_out)
    # polyphase FIR with a Kaiser-windowed sinc
    return scipy.signal.resample_poly(signal, sr_out // g, sr_in // g, window=("kaiser", 5.0))


def stft_magnitude(signal: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """|STFT| frames [T, n_fft // 2 + 1]; signals shorter than one window are zero-padded."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1 or signal.size == 0:
        raise AudioError("expected a non-empty 1-D signal")
    if signal.size < cfg.n_fft:
        signal = np.pad(signal, (0, cfg.n_fft - signal.size))
    frames = np.lib.stride_tricks.sliding_window_view(signal, cfg.n_fft)[:: cfg.hop_length]
    window = scipy.signal.get_window(cfg.window, cfg.n_fft)
    return np.abs(np.fft.rfft(frames * window, axis=-1)).astype(np.float32)


def spectrogram_from_waveform(signal: np.ndarray, sample_rate: int, cfg: FeatureConfig = FeatureConfig()) -> Spectrogram:
    if sample_rate != cfg.sample_rate:
        logger.warning("resampling from %d Hz to %d Hz", sample_rate, cfg.sample_rate)
        signal = resample(signal, sample_rate, cfg.sample_rate)
    return Spectrogram(stft_magnitude(signal, cfg), cfg.sample_rate / cfg.hop_length)


def extract_spectrogram(audio_path, cfg: FeatureConfig = FeatureConfig()) -> Spectrogram:
    signal, sr = read_wav(audio_path)
    return spectrogram_from_waveform(signal, sr, cfg)


# ----------------------------------------------------------------------------- matrix cache files

_HEADER = struct.Struct("<II")


def write_matrix(path, values: np.ndarray):
    """Write a float32 matrix as (rows, cols) uint32 little-endian header + row-major data."""
    values = np.ascontiguousarray(values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*values.shape))
        fh.write(values.tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        rows, cols = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != rows * cols:
        raise ValueError(f"{path}: truncated matrix file")
    return data.reshape(rows, cols).astype(np.float32)


class FeatureStore:
    """Lazily computed spectrograms keyed by sample id.

    Features are kept in memory; when ``cache_dir`` (or $LDNET_CACHE_DIR) is
    set they are also written to ``<cache_dir>/<sample_id>.f32``.
    """

    def __init__(self, samples: Mapping | None = None, cfg: FeatureConfig = FeatureConfig(), cache_dir=None,
                 waveforms: Mapping[str, np.ndarray] | None = None):
        self.cfg = cfg
        self.samples = dict(samples or {})
        self.waveforms = waveforms or {}
        cache_dir = cache_dir or os.environ.get(CACHE_ENV)
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self._memory: dict[str, Spectrogram] = {}

    def __contains__(self, sample_id):
        return sample_id in self._memory or sample_id in self.samples or sample_id in self.waveforms

    def __getitem__(self, sample_id: str) -> Spectrogram:
        spec = self._memory.get(sample_id)
        if spec is None:
            spec = self._load(sample_id)
            self._memory[sample_id] = spec
        return spec

    def cache_path(self, sample_id: str) -> Path:
        # the tag separates analysis settings and ids that sanitize to the same name
        tag = hashlib.sha1(f"{self.cfg!r}|{sample_id}".encode()).hexdigest()[:10]
        safe = re.sub(r"[^A-Za-z0-9._-]", "_", sample_id)
        return self.cache_dir / f"{safe}.{tag}.f32"

    def _load(self, sample_id: str) -> Spectrogram:
        frame_rate = self.cfg.sample_rate / self.cfg.hop_length
        cached = self.cache_path(sample_id) if self.cache_dir else None
        if cached is not None and cached.exists():
            return Spectrogram(read_matrix(cached), frame_rate)
        if sample_id in self.waveforms:
            spec = spectrogram_from_waveform(self.waveforms[sample_id], self.cfg.sample_rate, self.cfg)
        else:
            spec = extract_spectrogram(self.samples[sample_id].audio_path, self.cfg)
        if cached is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            write_matrix(cached, spec.values)
        return spec


# ----------------------------------------------------------------------------- batching


def repetitive_pad(spectrograms: Sequence[Spectrogram | np.ndarray]) -> Batch:
    """Stack spectrograms, tiling each one from its own start up to the longest length."""
    if not spectrograms:
        raise ValueError("cannot pad an empty list of spectrograms")
    mats = [s.values if isinstance(s, Spectrogram) else np.asarray(s) for s in spectrograms]
    counts = [m.shape[0] for m in mats]
    t_max = max(counts)
    out = np.empty((len(mats), t_max, mats[0].shape[1]), dtype=np.float32)
    for b, m in enumerate(mats):
        out[b] = m[np.arange(t_max) % m.shape[0]]
    return Batch(torch.from_numpy(out), torch.tensor(counts, dtype=torch.long))


def collate(spectrograms, listener_indices=None, ld_targets=None, mean_targets=None) -> Batch:
    batch = repetitive_pad(spectrograms)
    if listener_indices is not None:
        batch.listener_indices = torch.as_tensor(listener_indices, dtype=torch.long)
    if ld_targets is not None:
        batch.ld_targets = torch.as_tensor(ld_targets, dtype=torch.float32)
    if mean_targets is not None:
        batch.mean_targets = torch.as_tensor(mean_targets, dtype=torch.float32)
    return batch
