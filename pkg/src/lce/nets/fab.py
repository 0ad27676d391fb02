"""Frequency attention block: spatial attention over the half spectrum."""
from __future__ import annotations

import math

import numpy as np

from .. import ops, spectral
from ..tensor import Tensor, concat
from .module import Conv2d, Module


def fft_multadds(h: int, w: int) -> int:
    """Real mult-adds charged to one h x w transform: 5 N log2 N."""
    n = h * w
    return int(round(5 * n * math.log2(n))) if n > 1 else 0


class FAB(Module):
    """Compress/expand convs -> RFFT -> ReLU -> pooled map -> 7x7 conv -> sigmoid
    -> rescale the spectrum -> inverse RFFT.

    ReLU acts on the real and imaginary parts separately; the attention map is
    pooled from real parts (max) and imaginary parts (mean) across channels.
    """

    def __init__(self, c: int, squeeze: int, rng: np.random.Generator):
        self.conv1 = Conv2d(c, squeeze, 3, rng)
        self.conv2 = Conv2d(squeeze, c, 3, rng)
        # the spectrum is not an image; zero padding at its borders
        self.map_conv = Conv2d(2, 1, 7, rng, pad_mode="zeros")

    def forward(self, y: Tensor) -> Tensor:
        y1 = self.conv2(self.conv1(y))
        spec = spectral.rfft2(y1)
        re = ops.relu(spec.real)
        im = ops.relu(spec.imag)
        pooled = concat([ops.pool_channel(re, "max"), ops.pool_channel(im, "avg")], axis=1)
        attn = ops.sigmoid(self.map_conv(pooled))
        return spectral.irfft2(spectral.SpectrumTensor(re * attn, im * attn, y.shape[-1]))

    def multadds(self, h: int, w: int) -> int:
        c = self.conv2.weight.shape[0]
        wf = w // 2 + 1
        return (self.conv1.multadds(h, w) + self.conv2.multadds(h, w) + self.map_conv.multadds(h, wf)
                + 2 * c * fft_multadds(h, w))
