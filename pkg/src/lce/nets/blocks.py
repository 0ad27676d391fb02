"""Convolutional blocks: residual block, RCAB, residual group, Corrector."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import ops
from ..tensor import Tensor
from .module import Conv2d, Module


@dataclass(frozen=True)
class CorrectorConfig:
    channels: int = 64
    num_rg: int = 4
    rcabs_per_rg: int = 10
    reduction: int = 16

    def __post_init__(self):
        if min(self.channels, self.num_rg, self.rcabs_per_rg, self.reduction) < 1:
            raise ValueError("corrector config values must be positive")
        if self.channels % self.reduction:
            raise ValueError("reduction must divide channels")

    @classmethod
    def tiny(cls, channels: int = 32) -> "CorrectorConfig":
        return cls(channels=channels, num_rg=2, rcabs_per_rg=5, reduction=16 if channels % 16 == 0 else 1)


class ResBlock(Module):
    """conv3x3 - ReLU - conv3x3 plus identity."""

    def __init__(self, c: int, rng: np.random.Generator):
        self.conv1 = Conv2d(c, c, 3, rng)
        self.conv2 = Conv2d(c, c, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(ops.relu(self.conv1(x))) + x


class ChannelAttention(Module):
    def __init__(self, c: int, reduction: int, rng: np.random.Generator):
        self.squeeze = Conv2d(c, c // reduction, 1, rng)
        self.excite = Conv2d(c // reduction, c, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        s = x.mean(axis=(2, 3), keepdims=True)
        s = ops.sigmoid(self.excite(ops.relu(self.squeeze(s))))
        return x * s

    def multadds(self, h: int, w: int) -> int:
        return self.squeeze.multadds(1, 1) + self.excite.multadds(1, 1)


class RCAB(Module):
    def __init__(self, c: int, reduction: int, rng: np.random.Generator):
        self.conv1 = Conv2d(c, c, 3, rng)
        self.conv2 = Conv2d(c, c, 3, rng)
        self.ca = ChannelAttention(c, reduction, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.ca(self.conv2(ops.relu(self.conv1(x)))) + x


class ResidualGroup(Module):
    def __init__(self, c: int, n_blocks: int, reduction: int, rng: np.random.Generator):
        self.blocks = [RCAB(c, reduction, rng) for _ in range(n_blocks)]
        self.conv = Conv2d(c, c, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        y = x
        for b in self.blocks:
            y = b(y)
        return self.conv(y) + x


class Corrector(Module):
    """LR -> corrected LR at the same size.

    7x7 conv and two residual blocks give ``f0``; residual groups refine it;
    the output is ``conv2(conv1(f_N) + f0)``.
    """

    def __init__(self, cfg: CorrectorConfig, rng: np.random.Generator, in_channels: int = 3):
        c = cfg.channels
        self.cfg = cfg
        self.head = Conv2d(in_channels, c, 7, rng)
        self.head_blocks = [ResBlock(c, rng) for _ in range(2)]
        self.groups = [ResidualGroup(c, cfg.rcabs_per_rg, cfg.reduction, rng) for _ in range(cfg.num_rg)]
        self.conv1 = Conv2d(c, c, 3, rng)
        self.conv2 = Conv2d(c, in_channels, 3, rng)

    def forward(self, lr: Tensor) -> Tensor:
        if lr.shape[1] != self.head.weight.shape[1]:
            raise ValueError(f"corrector expects {self.head.weight.shape[1]} channels, got {lr.shape[1]}")
        f0 = self.head(lr)
        for b in self.head_blocks:
            f0 = b(f0)
        f = f0
        for g in self.groups:
            f = g(f)
        return self.conv2(self.conv1(f) + f0)
