"""Model zoo: MOSNet, MBNet, LDNet, LDNet-MN and LDNet-ML.

Every LD-capable model is factored as

    frame_scores = Decoder(Encoder(spectrogram), listener)

where the encoder never sees the listener. MBNet keeps its two-network layout:
a MeanNet on the raw spectrogram plus a BiasNet whose encoder is a single
convolution, and its LD score is the (range-clipped) sum of both paths.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import torch
from torch import nn

from ldnet.mobilenet import MobileNetV2Stack, MobileNetV3Stack

FAMILIES = ("mosnet", "mbnet", "ldnet", "ldnet_mn", "ldnet_ml")
ENCODERS = ("mbnet_conv", "mobilenet_v2", "mobilenet_v3")
DECODERS = ("ffn", "rnn")

LD_FAMILIES = ("mbnet", "ldnet", "ldnet_mn", "ldnet_ml")
MEAN_NET_FAMILIES = ("mosnet", "mbnet", "ldnet_mn")


class ConfigError(ValueError):
    pass


class CapabilityError(RuntimeError):
    """Raised when an operation needs a path the model family does not have."""


@dataclass
class ModelConfig:
    family: str = "ldnet"
    encoder: str = "mobilenet_v3"
    decoder: str = "ffn"
    listener_count: int = 0
    embedding_dim: int = 128
    range_clip: bool = True
    n_freq: int = 257
    encoder_dim: int = 256
    hidden_dim: int = 64
    rnn_hidden: int = 128
    dropout: float = 0.3
    mean_net: str = "ffn"  # MeanNet head type for ldnet_mn

    def validate(self, require_listeners: bool = True) -> "ModelConfig":
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"unknown encoder {self.encoder!r}; expected one of {ENCODERS}")
        if self.decoder not in DECODERS:
            raise ConfigError(f"unknown decoder {self.decoder!r}; expected one of {DECODERS}")
        if self.mean_net not in DECODERS:
            raise ConfigError(f"unknown mean_net head {self.mean_net!r}; expected one of {DECODERS}")
        if not require_listeners:
            return self
        if self.family in LD_FAMILIES and self.listener_count < 1:
            raise ConfigError(f"family {self.family} needs listener_count >= 1")
        if self.family == "ldnet_ml" and self.listener_count < 2:
            raise ConfigError("ldnet_ml needs at least one real listener plus the mean listener")
        if self.n_freq < 1 or self.embedding_dim < 1:
            raise ConfigError("n_freq and embedding_dim must be positive")
        return self

    @property
    def real_listener_count(self) -> int:
        """Number of real training listeners (mean listener excluded)."""
        if self.family == "ldnet_ml":
            return self.listener_count - 1
        return self.listener_count if self.family in LD_FAMILIES else 0

    @property
    def mean_listener_index(self) -> int | None:
        return self.listener_count - 1 if self.family == "ldnet_ml" else None

    def to_dict(self) -> dict:
        return asdict(self)


class Scores(NamedTuple):
    frames: torch.Tensor  # [B, T]
    utterance: torch.Tensor  # [B]


def pool_frames(frames: torch.Tensor, frame_counts: torch.Tensor | None = None) -> torch.Tensor:
    """Average frame scores over each item's true length; padding frames are ignored."""
    if frame_counts is None:
        return frames.mean(dim=1)
    t = frames.shape[1]
    counts = frame_counts.to(frames.device)
    mask = torch.arange(t, device=frames.device)[None, :] < counts[:, None]
    return (frames * mask).sum(dim=1) / counts.to(frames.dtype)


def range_clip(raw: torch.Tensor) -> torch.Tensor:
    """Map an unbounded projection onto the MOS scale [1, 5]."""
    return 1.0 + 4.0 * torch.sigmoid(raw)


# ----------------------------------------------------------------------------- encoders


class MBNetConvEncoder(nn.Module):
    """Four conv2d blocks (16/32/64/128 channels) with batch norm and dropout.

    Each block ends in a frequency stride of 3; the remaining frequency bins are
    flattened into the per-frame feature vector.
    """

    def __init__(self, n_freq: int, dropout: float, out_dim: int | None, channels=(16, 32, 64, 128)):
        super().__init__()
        blocks = []
        c_in, f = 1, n_freq
        for c in channels:
            blocks.append(nn.Sequential(
                nn.Conv2d(c_in, c, 3, padding=1), nn.BatchNorm2d(c), nn.ReLU(),
                nn.Conv2d(c, c, 3, padding=1), nn.BatchNorm2d(c), nn.ReLU(),
                nn.Conv2d(c, c, 3, padding=1, stride=(1, 3)), nn.BatchNorm2d(c), nn.ReLU(),
                nn.Dropout(dropout),
            ))
            c_in, f = c, (f - 1) // 3 + 1
        self.blocks = nn.Sequential(*blocks)
        flat = c_in * f
        self.proj = nn.Linear(flat, out_dim) if out_dim else None
        self.out_dim = out_dim or flat

    def forward(self, x):  # x: [B, T, F]
        h = self.blocks(x.unsqueeze(1))  # [B, C, T, F']
        h = h.permute(0, 2, 1, 3).flatten(2)
        return self.proj(h) if self.proj is not None else h


class MobileNetEncoder(nn.Module):
    def __init__(self, stack: nn.Module, out_dim: int):
        super().__init__()
        self.stack = stack.to(memory_format=torch.channels_last)
        self.proj = nn.Linear(stack.out_channels, out_dim)
        self.out_dim = out_dim

    def forward(self, x):  # x: [B, T, F]
        h = x.unsqueeze(1).contiguous(memory_format=torch.channels_last)
        h = self.stack(h).mean(dim=3)  # collapse frequency -> [B, C, T]
        return self.proj(h.transpose(1, 2))


class SingleConvEncoder(nn.Module):
    """BiasNet front end of MBNet: one conv2d layer, frequency pooled to a few bins."""

    def __init__(self, channels: int = 16, pooled_freq: int = 4):
        super().__init__()
        self.conv = nn.Sequential(nn.Conv2d(1, channels, 3, padding=1, stride=(1, 3)), nn.ReLU())
        self.pool = nn.AdaptiveAvgPool2d((None, pooled_freq))
        self.out_dim = channels * pooled_freq

    def forward(self, x):
        h = self.pool(self.conv(x.unsqueeze(1)))
        return h.permute(0, 2, 1, 3).flatten(2)


def make_encoder(cfg: ModelConfig, out_dim: int | None) -> nn.Module:
    if cfg.encoder == "mbnet_conv":
        return MBNetConvEncoder(cfg.n_freq, cfg.dropout, out_dim)
    if cfg.encoder == "mobilenet_v2":
        return MobileNetEncoder(MobileNetV2Stack(), out_dim or cfg.encoder_dim)
    return MobileNetEncoder(MobileNetV3Stack(stem_stride=3), out_dim or cfg.encoder_dim)


# ----------------------------------------------------------------------------- heads


class FFNHead(nn.Module):
    """One hidden layer followed by a scalar projection, applied per frame."""

    def __init__(self, in_dim: int, hidden: int, dropout: float = 0.0):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(), nn.Dropout(dropout), nn.Linear(hidden, 1))

    def forward(self, h):
        return self.net(h).squeeze(-1)


class RNNHead(nn.Module):
    """One bidirectional LSTM layer, then the FFN head."""

    def __init__(self, in_dim: int, rnn_hidden: int, hidden: int, dropout: float = 0.0):
        super().__init__()
        self.rnn = nn.LSTM(in_dim, rnn_hidden, batch_first=True, bidirectional=True)
        self.ffn = FFNHead(2 * rnn_hidden, hidden, dropout)

    def forward(self, h):
        out, _ = self.rnn(h)
        return self.ffn(out)


def make_head(kind: str, in_dim: int, cfg: ModelConfig, hidden: int | None = None, dropout: float = 0.0):
    hidden = hidden or cfg.hidden_dim
    if kind == "rnn":
        return RNNHead(in_dim, cfg.rnn_hidden, hidden, dropout)
    return FFNHead(in_dim, hidden, dropout)


# ----------------------------------------------------------------------------- model


class LDModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config.validate()
        self.decode_count = 0  # listener-conditioned evaluations, one per (item, listener)
        self._warned_listener = False
        fam = config.family

        if fam in ("mosnet", "mbnet"):
            # MeanNet on the raw spectrogram: CNN-BLSTM for the mbnet_conv encoder.
            self.mean_encoder = make_encoder(config, out_dim=None)
            self.mean_head = make_head(config.decoder, self.mean_encoder.out_dim, config,
                                       hidden=2 * config.hidden_dim, dropout=config.dropout)
        if fam == "mbnet":
            self.encoder = SingleConvEncoder()
            self.embedding = nn.Embedding(config.listener_count, config.embedding_dim)
            self.decoder = RNNHead(self.encoder.out_dim + config.embedding_dim, config.hidden_dim,
                                   config.hidden_dim // 2)
        elif fam in ("ldnet", "ldnet_mn", "ldnet_ml"):
            self.encoder = make_encoder(config, out_dim=config.encoder_dim)
            self.embedding = nn.Embedding(config.listener_count, config.embedding_dim)
            self.decoder = make_head(config.decoder, self.encoder.out_dim + config.embedding_dim, config)
            if fam == "ldnet_mn":
                self.mean_head = make_head(config.mean_net, self.encoder.out_dim, config)

    # -- helpers ---------------------------------------------------------------

    @property
    def family(self) -> str:
        return self.config.family

    def clip(self, raw):
        return range_clip(raw) if self.config.range_clip else raw

    def _check_features(self, features: torch.Tensor):
        if features.dim() != 3 or features.shape[-1] != self.config.n_freq:
            raise ValueError(
                f"expected features shaped [B, T, {self.config.n_freq}], got {tuple(features.shape)}"
            )

    def _check_listeners(self, listener_index: torch.Tensor):
        n = self.config.listener_count
        if listener_index.numel() and (int(listener_index.min()) < 0 or int(listener_index.max()) >= n):
            raise IndexError(f"listener index out of range [0, {n}): {listener_index.tolist()}")

    # -- public paths ----------------------------------------------------------

    def encode(self, features: torch.Tensor) -> torch.Tensor:
        """Listener-independent features [B, T, D], one vector per input frame."""
        self._check_features(features)
        if self.family == "mosnet":
            return self.mean_encoder(features)
        return self.encoder(features)

    def decode_raw(self, li: torch.Tensor, listener_index: torch.Tensor) -> torch.Tensor:
        if self.family not in LD_FAMILIES:
            raise CapabilityError(f"family {self.family} has no listener-dependent decoder")
        listener_index = torch.as_tensor(listener_index, dtype=torch.long)
        self._check_listeners(listener_index)
        self.decode_count += int(listener_index.numel())
        emb = self.embedding(listener_index)[:, None, :].expand(-1, li.shape[1], -1)
        return self.decoder(torch.cat([li, emb], dim=-1))

    def decode(self, li: torch.Tensor, listener_index: torch.Tensor) -> torch.Tensor:
        """Frame scores [B, T] for each item's listener.

        For mbnet this is the BiasNet output: an unclipped per-frame bias.
        """
        raw = self.decode_raw(li, listener_index)
        return raw if self.family == "mbnet" else self.clip(raw)

    def mean_net_forward(self, features: torch.Tensor | None = None, li: torch.Tensor | None = None,
                         raw: bool = False) -> torch.Tensor:
        """MeanNet frame scores [B, T].

        mosnet/mbnet read the spectrogram; ldnet_mn reads LI features (computed
        from ``features`` when ``li`` is not given).
        """
        if self.family not in MEAN_NET_FAMILIES:
            raise CapabilityError(f"family {self.family} has no MeanNet")
        if self.family == "ldnet_mn":
            if li is None:
                li = self.encode(features)
            out = self.mean_head(li)
        else:
            self._check_features(features)
            out = self.mean_head(self.mean_encoder(features))
        return out if raw else self.clip(out)

    def bias_net_forward(self, features: torch.Tensor, listener_index: torch.Tensor) -> torch.Tensor:
        if self.family != "mbnet":
            raise CapabilityError(f"family {self.family} has no BiasNet")
        return self.decode(self.encode(features), listener_index)

    def forward_ld(self, features: torch.Tensor, listener_index: torch.Tensor | None = None,
                   frame_counts: torch.Tensor | None = None) -> Scores:
        fam = self.family
        if fam == "mosnet":
            if listener_index is not None and not self._warned_listener:
                warnings.warn("mosnet has no listener input; listener indices are ignored", stacklevel=2)
                self._warned_listener = True
            frames = self.mean_net_forward(features)
        elif fam == "mbnet":
            if listener_index is None:
                raise ValueError("mbnet needs listener indices for LD scores")
            mean_raw = self.mean_net_forward(features, raw=True)
            frames = self.clip(mean_raw + self.bias_net_forward(features, listener_index))
        else:
            if listener_index is None:
                raise ValueError(f"{fam} needs listener indices for LD scores")
            frames = self.decode(self.encode(features), listener_index)
        return Scores(frames, pool_frames(frames, frame_counts))

    def forward(self, features, listener_index=None, frame_counts=None):
        return self.forward_ld(features, listener_index, frame_counts)

    # -- listener-group views --------------------------------------------------

    def encoder_parameters(self):
        """Parameters of the listener-independent encoder on the LD path."""
        return list(self.encoder.parameters()) if hasattr(self, "encoder") else []

    def bias_net_parameters(self):
        if self.family != "mbnet":
            return []
        return [*self.encoder.parameters(), *self.decoder.parameters(), *self.embedding.parameters()]


def build_model(config: ModelConfig, seed: int = 0) -> LDModel:
    """Construct a model with deterministic initial parameters for ``seed``."""
    config.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = LDModel(config)
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
