"""Differentiable 2-D real FFT over the two trailing axes.

The half spectrum keeps ``W // 2 + 1`` columns. Real and imaginary parts are
carried as separate real tensors so the rest of the engine never sees complex
numbers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, getitem, make_result

__all__ = ["SpectrumTensor", "rfft2", "irfft2", "dft_divide", "half_bin_weights"]


@dataclass
class SpectrumTensor:
    real: Tensor
    imag: Tensor
    original_width: int

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ValueError("real and imag parts differ in shape")
        if self.real.shape[-1] != self.original_width // 2 + 1:
            raise ValueError(
                f"spectrum width {self.real.shape[-1]} inconsistent with original width {self.original_width}"
            )

    @property
    def shape(self) -> tuple:
        return self.real.shape

    def complex(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data


def half_bin_weights(width: int) -> np.ndarray:
    """Multiplicity of each half-spectrum column in the full spectrum (1 or 2)."""
    c = np.full(width // 2 + 1, 2.0)
    c[0] = 1.0
    if width % 2 == 0:
        c[-1] = 1.0
    return c


def _rfft2_stacked(x: Tensor) -> Tensor:
    H, W = x.shape[-2:]
    z = np.fft.rfft2(x.data, axes=(-2, -1))
    out = np.stack([z.real, z.imag]).astype(x.dtype)
    inv_c = 1.0 / half_bin_weights(W)

    def adjoint(g):
        # d/dx of <g, rfft2(x)> with g = gr + i gi is Re(sum_k g_k e^{+i theta})
        gc = (g[0] + 1j * g[1]) * inv_c
        return (np.fft.irfft2(gc, s=(H, W), axes=(-2, -1)).astype(x.dtype) * (H * W),)

    return make_result(out, (x,), adjoint, "rfft2")


def rfft2(x: Tensor) -> SpectrumTensor:
    """Half-spectrum 2-D DFT of a real tensor over its trailing two axes."""
    if x.ndim < 2:
        raise ValueError("rfft2 needs at least two axes")
    stacked = _rfft2_stacked(x)
    return SpectrumTensor(getitem(stacked, 0), getitem(stacked, 1), x.shape[-1])


def irfft2(spec: SpectrumTensor) -> Tensor:
    """Real inverse of :func:`rfft2`; ``irfft2(rfft2(x)) == x`` to rounding."""
    re, im = spec.real, spec.imag
    W = spec.original_width
    if re.shape[-1] != W // 2 + 1:
        raise ValueError("inconsistent width metadata")
    H = re.shape[-2]
    dtype = re.dtype
    out = np.fft.irfft2(re.data + 1j * im.data, s=(H, W), axes=(-2, -1)).astype(dtype)
    scale = half_bin_weights(W) / (H * W)

    def adjoint(g):
        z = np.fft.rfft2(g, axes=(-2, -1)) * scale
        return z.real.astype(dtype), z.imag.astype(dtype)

    return make_result(out, (re, im), adjoint, "irfft2")


def dft_divide(numerator: SpectrumTensor, denominator: SpectrumTensor, eps: float | None = None,
               rel_eps: float = 1e-12) -> SpectrumTensor:
    """Guarded complex division ``N conj(D) / (|D|^2 + eps)``.

    ``eps`` defaults to ``rel_eps * max |D|^2``. Not recorded on the tape.
    """
    if numerator.shape != denominator.shape:
        raise ValueError("spectrum shapes differ")
    n = numerator.complex()
    d = denominator.complex()
    power = np.abs(d) ** 2
    if eps is None:
        eps = rel_eps * float(power.max()) if power.max() > 0 else rel_eps
    q = n * np.conj(d) / (power + eps)
    dtype = numerator.real.dtype
    return SpectrumTensor(Tensor(q.real.astype(dtype)), Tensor(q.imag.astype(dtype)), numerator.original_width)
