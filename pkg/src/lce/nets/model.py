"""The assembled network: Corrector, CLR feature extractor, LR branch, fusion,
frequency-self attention body and pixel-shuffle upsampler."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import ops
from ..tensor import Parameter, Tensor, concat, get_default_dtype
from .blocks import Corrector, CorrectorConfig, ResBlock
from .fab import FAB
from .module import Conv2d, Module
from .swin import FSAG

MODES = ("case1", "case2", "case3")


@dataclass(frozen=True)
class SrConfig:
    channels: int = 144
    num_fsag: int = 6
    fsabs_per_fsag: int = 6
    heads: int = 6
    window: int = 16
    mlp_ratio: float = 2.0
    fab_squeeze_channels: int = 6
    scale: int = 4
    position_bias: bool = True

    def __post_init__(self):
        if self.channels % self.heads:
            raise ValueError("channels must be divisible by heads")
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.fab_squeeze_channels < 1:
            raise ValueError("fab_squeeze_channels must be >= 1")
        if self.scale not in (2, 4):
            raise ValueError("scale must be 2 or 4")

    @classmethod
    def tiny(cls, channels: int = 32, scale: int = 2, window: int = 8, heads: int = 4) -> "SrConfig":
        return cls(channels=channels, num_fsag=1, fsabs_per_fsag=2, heads=heads, window=window,
                   fab_squeeze_channels=max(1, channels // 24), scale=scale)


class FrequencyResidual(Module):
    """``x + alpha * FAB(x)`` with its own learnable alpha."""

    def __init__(self, c: int, squeeze: int, rng: np.random.Generator, alpha_init: float = 0.01):
        self.fab = FAB(c, squeeze, rng)
        self.alpha = Parameter(np.full(1, alpha_init, dtype=get_default_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        return x + self.alpha * self.fab(x)


class CLRExtractor(Module):
    """Shallow conv, two frequency attention blocks, one residual block."""

    def __init__(self, c: int, squeeze: int, rng: np.random.Generator, in_channels: int = 3):
        self.head = Conv2d(in_channels, c, 3, rng)
        self.fabs = [FrequencyResidual(c, squeeze, rng) for _ in range(2)]
        self.rb = ResBlock(c, rng)

    def forward(self, clr: Tensor) -> Tensor:
        f = self.head(clr)
        for m in self.fabs:
            f = m(f)
        return self.rb(f)


class LRBranch(Module):
    def __init__(self, c: int, rng: np.random.Generator, in_channels: int = 3):
        self.head = Conv2d(in_channels, c, 3, rng)
        self.rb = ResBlock(c, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.rb(self.head(x))


class Upsampler(Module):
    """Cascaded x2 pixel-shuffle stages."""

    def __init__(self, c: int, scale: int, rng: np.random.Generator):
        self.stages = [Conv2d(c, 4 * c, 3, rng) for _ in range({2: 1, 4: 2}[scale])]

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.stages:
            x = ops.pixel_shuffle(conv(x), 2)
        return x

    def multadds(self, h: int, w: int) -> int:
        total = 0
        for conv in self.stages:
            total += conv.multadds(h, w)
            h, w = 2 * h, 2 * w
        return total


class LceModel(Module):
    """Blind SR network in one of three pipeline modes.

    ``case1``  LR features only (no corrector).
    ``case2``  corrector output fed to the case1 network in place of LR.
    ``case3``  CLR features (frequency extractor) fused with LR features.
    """

    def __init__(self, corrector_cfg: CorrectorConfig, sr_cfg: SrConfig, mode: str = "case3", seed: int = 0,
                 in_channels: int = 3):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        rng = np.random.default_rng(seed)
        c = sr_cfg.channels
        self.mode = mode
        self.corrector_cfg = corrector_cfg
        self.sr_cfg = sr_cfg
        self.corrector = Corrector(corrector_cfg, rng, in_channels) if mode != "case1" else None
        self.clr_extractor = CLRExtractor(c, sr_cfg.fab_squeeze_channels, rng, in_channels) if mode == "case3" else None
        self.lr_branch = LRBranch(c, rng, in_channels)
        self.fuse = Conv2d(2 * c if mode == "case3" else c, c, 1, rng)
        self.body = [
            FSAG(c, sr_cfg.fsabs_per_fsag, sr_cfg.heads, sr_cfg.window, sr_cfg.mlp_ratio,
                 sr_cfg.fab_squeeze_channels, rng, position_bias=sr_cfg.position_bias)
            for _ in range(sr_cfg.num_fsag)
        ]
        self.conv_after_body = Conv2d(c, c, 3, rng)
        self.upsampler = Upsampler(c, sr_cfg.scale, rng)
        self.conv_last = Conv2d(c, in_channels, 3, rng)

    @property
    def scale(self) -> int:
        return self.sr_cfg.scale

    def correct(self, lr: Tensor) -> Tensor:
        if self.corrector is None:
            raise ValueError("case1 model has no corrector")
        return self.corrector(lr)

    def shallow(self, lr: Tensor, clr: Optional[Tensor]) -> Tensor:
        if self.mode == "case1":
            return self.fuse(self.lr_branch(lr))
        if self.mode == "case2":
            return self.fuse(self.lr_branch(clr))
        return self.fuse(concat([self.clr_extractor(clr), self.lr_branch(lr)], axis=1))

    def deep(self, f0: Tensor) -> Tensor:
        H, W = f0.shape[2:]
        w = self.sr_cfg.window
        ph, pw = (-H) % w, (-W) % w
        if (ph and ph >= H) or (pw and pw >= W):
            raise ValueError(f"input {H}x{W} too small for window {w}")
        f = ops.pad2d(f0, (0, ph, 0, pw), "reflect") if ph or pw else f0
        for g in self.body:
            f = g(f)
        if ph or pw:
            f = f[:, :, :H, :W]
        return self.conv_after_body(f) + f0

    def forward(self, lr: Tensor, clr: Optional[Tensor] = None) -> tuple[Tensor, Optional[Tensor]]:
        """Return ``(sr, clr)``; ``clr`` is computed by the corrector unless given."""
        if lr.ndim != 4 or lr.shape[1] != self.conv_last.weight.shape[0]:
            raise ValueError(f"expected B x {self.conv_last.weight.shape[0]} x H x W input, got {lr.shape}")
        if self.mode != "case1" and clr is None:
            clr = self.correct(lr)
        f0 = self.shallow(lr, clr)
        sr = self.conv_last(self.upsampler(self.deep(f0)))
        return sr, clr

    def sr_parameters(self) -> list[tuple[str, Parameter]]:
        return [(n, p) for n, p in self.named_parameters() if not n.startswith("corrector.")]

    def multadds(self, h: int, w: int) -> int:
        win = self.sr_cfg.window
        hp, wp = h + (-h) % win, w + (-w) % win
        total = 0
        for name, child in self.named_children():
            if name.startswith("body."):
                total += child.multadds(hp, wp)
            elif name == "conv_last":
                total += child.multadds(h * self.scale, w * self.scale)
            else:
                total += child.multadds(h, w)
        return int(total)


def count_params(model: Module) -> int:
    """Number of trainable scalars (frozen or not)."""
    return model.num_params()


def count_multadds(model: Module, h: int = 180, w: int = 320) -> int:
    """Mult-adds of one forward pass.

    Rules: conv = Cout * Cin * kh * kw * H * W; linear = tokens * in * out;
    attention adds 2 * tokens * window^2 * C for scores and weighted sum; each
    FFT costs 5 N log2 N per channel. Elementwise ops, norms and pooling are free.
    The body runs at the window-padded size.
    """
    return int(model.multadds(h, w))
