"""MobileNetV2/V3 convolution stacks adapted to spectrogram input.

The input is a one-channel image laid out as [time, frequency]. Every stride
is applied to the frequency axis only, so the stack keeps one output column
per input frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn


def make_divisible(value: float, divisor: int = 8, min_value: int | None = None) -> int:
    min_value = min_value or divisor
    new = max(min_value, int(value + divisor / 2) // divisor * divisor)
    if new < 0.9 * value:
        new += divisor
    return new


class ConvNormAct(nn.Sequential):
    def __init__(self, c_in, c_out, kernel=3, freq_stride=1, groups=1, act: type[nn.Module] | None = nn.ReLU6):
        padding = (kernel - 1) // 2
        layers: list[nn.Module] = [
            nn.Conv2d(c_in, c_out, kernel, stride=(1, freq_stride), padding=padding, groups=groups, bias=False),
            nn.BatchNorm2d(c_out),
        ]
        if act is not None:
            layers.append(act())
        super().__init__(*layers)


class SqueezeExcite(nn.Module):
    def __init__(self, channels: int, squeeze: int):
        super().__init__()
        self.fc1 = nn.Conv2d(channels, squeeze, 1)
        self.fc2 = nn.Conv2d(squeeze, channels, 1)

    def forward(self, x):
        # pooled over frequency only so time frames stay independent of each other
        s = x.mean(dim=3, keepdim=True)
        s = torch.relu(self.fc1(s))
        return x * nn.functional.hardsigmoid(self.fc2(s))


@dataclass(frozen=True)
class BottleneckV3:
    c_in: int
    kernel: int
    expanded: int
    c_out: int
    use_se: bool
    activation: str  # "RE" or "HS"
    freq_stride: int


class InvertedResidualV3(nn.Module):
    def __init__(self, cfg: BottleneckV3):
        super().__init__()
        act = nn.Hardswish if cfg.activation == "HS" else nn.ReLU
        self.use_residual = cfg.freq_stride == 1 and cfg.c_in == cfg.c_out
        layers: list[nn.Module] = []
        if cfg.expanded != cfg.c_in:
            layers.append(ConvNormAct(cfg.c_in, cfg.expanded, kernel=1, act=act))
        layers.append(
            ConvNormAct(cfg.expanded, cfg.expanded, kernel=cfg.kernel, freq_stride=cfg.freq_stride,
                        groups=cfg.expanded, act=act)
        )
        if cfg.use_se:
            layers.append(SqueezeExcite(cfg.expanded, make_divisible(cfg.expanded // 4, 8)))
        layers.append(ConvNormAct(cfg.expanded, cfg.c_out, kernel=1, act=None))
        self.block = nn.Sequential(*layers)

    def forward(self, x):
        out = self.block(x)
        return out + x if self.use_residual else out


class InvertedResidualV2(nn.Module):
    def __init__(self, c_in: int, c_out: int, freq_stride: int, expand_ratio: int):
        super().__init__()
        hidden = int(round(c_in * expand_ratio))
        self.use_residual = freq_stride == 1 and c_in == c_out
        layers: list[nn.Module] = []
        if expand_ratio != 1:
            layers.append(ConvNormAct(c_in, hidden, kernel=1))
        layers += [
            ConvNormAct(hidden, hidden, kernel=3, freq_stride=freq_stride, groups=hidden),
            ConvNormAct(hidden, c_out, kernel=1, act=None),
        ]
        self.block = nn.Sequential(*layers)

    def forward(self, x):
        out = self.block(x)
        return out + x if self.use_residual else out


# MobileNetV3-small layout; stride-2 positions become frequency stride 3.
V3_SMALL: tuple[BottleneckV3, ...] = (
    BottleneckV3(16, 3, 16, 16, True, "RE", 3),
    BottleneckV3(16, 3, 72, 24, False, "RE", 3),
    BottleneckV3(24, 3, 88, 24, False, "RE", 1),
    BottleneckV3(24, 5, 96, 40, True, "HS", 3),
    BottleneckV3(40, 5, 240, 40, True, "HS", 1),
    BottleneckV3(40, 5, 240, 40, True, "HS", 1),
    BottleneckV3(40, 5, 120, 48, True, "HS", 1),
    BottleneckV3(48, 5, 144, 48, True, "HS", 1),
    BottleneckV3(48, 5, 288, 96, True, "HS", 3),
    BottleneckV3(96, 5, 576, 96, True, "HS", 1),
    BottleneckV3(96, 5, 576, 96, True, "HS", 1),
)

# (expand_ratio, channels, repeats, freq_stride); MobileNetV2 layout without the
# 320-channel stage, with two 160-channel blocks instead of three.
V2_SETTING: tuple[tuple[int, int, int, int], ...] = (
    (1, 16, 1, 1),
    (6, 24, 2, 3),
    (6, 32, 3, 3),
    (6, 64, 4, 3),
    (6, 96, 3, 1),
    (6, 160, 2, 3),
)


class MobileNetV3Stack(nn.Module):
    def __init__(self, blocks: Sequence[BottleneckV3] = V3_SMALL, stem_channels: int = 16, stem_stride: int = 3):
        super().__init__()
        self.stem = ConvNormAct(1, stem_channels, kernel=3, freq_stride=stem_stride, act=nn.Hardswish)
        self.blocks = nn.Sequential(*(InvertedResidualV3(b) for b in blocks))
        self.out_channels = blocks[-1].c_out

    def forward(self, x):
        return self.blocks(self.stem(x))


class MobileNetV2Stack(nn.Module):
    def __init__(self, setting=V2_SETTING, stem_channels: int = 32, stem_stride: int = 3):
        super().__init__()
        self.stem = ConvNormAct(1, stem_channels, kernel=3, freq_stride=stem_stride)
        layers = []
        c_in = stem_channels
        for t, c, n, s in setting:
            for i in range(n):
                layers.append(InvertedResidualV2(c_in, c, s if i == 0 else 1, t))
                c_in = c
        self.blocks = nn.Sequential(*layers)
        self.out_channels = c_in

    def forward(self, x):
        return self.blocks(self.stem(x))
