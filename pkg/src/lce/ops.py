"""Neural-network operations on :class:`~lce.tensor.Tensor`.

Image tensors are laid out batch x channels x height x width. Convolution is
cross-correlation (deep-learning convention).
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .tensor import Tensor, capture, make_result

__all__ = [
    "pad2d",
    "conv2d",
    "linear",
    "layer_norm",
    "relu",
    "sigmoid",
    "gelu",
    "softmax",
    "pool_channel",
    "pixel_shuffle",
    "pixel_unshuffle",
]

PAD_MODES = ("zeros", "reflect")


def _reflect_fold(g: np.ndarray, axis: int, before: int, after: int) -> np.ndarray:
    """Adjoint of reflect padding along one axis."""
    n = g.shape[axis] - before - after
    g = np.moveaxis(g, axis, 0)
    out = g[before:before + n].copy()
    for r in range(before):
        out[before - r] += g[r]
    for r in range(after):
        out[n - 2 - r] += g[before + n + r]
    return np.moveaxis(out, 0, axis)


def pad2d(x: Tensor, pad, mode: str = "zeros") -> Tensor:
    """Pad the two trailing axes. ``pad`` is an int or (top, bottom, left, right)."""
    if isinstance(pad, int):
        pad = (pad, pad, pad, pad)
    top, bottom, left, right = pad
    if mode not in PAD_MODES:
        raise ValueError(f"unknown pad mode {mode!r}")
    if not any(pad):
        return x
    H, W = x.shape[-2:]
    if mode == "reflect" and (max(top, bottom) >= H or max(left, right) >= W):
        raise ValueError(f"reflect pad {pad} too large for {H}x{W}")
    widths = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    data = np.pad(x.data, widths, mode="constant" if mode == "zeros" else "reflect")

    def adjoint(g):
        if mode == "zeros":
            return (g[..., top:top + H, left:left + W].copy(),)
        g = _reflect_fold(g, g.ndim - 2, top, bottom)
        return (_reflect_fold(g, g.ndim - 1, left, right),)

    return make_result(data, (x,), adjoint, f"pad2d[{mode}]")


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> tuple[np.ndarray, int, int]:
    B, C, Hp, Wp = xp.shape
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(B, C * kh * kw, Ho * Wo)
    return cols, Ho, Wo


def _conv_valid(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: int) -> Tensor:
    B, C, Hp, Wp = x.shape
    O, _, kh, kw = weight.shape
    cols, Ho, Wo = _im2col(x.data, kh, kw, stride)
    wm = weight.data.reshape(O, -1)
    # tall-skinny product (HW x Ckk) @ (Ckk x O) runs faster than the wide one
    out = np.matmul(cols.transpose(0, 2, 1), wm.T)
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(B, O, Ho, Wo)

    need_x, need_w = x.requires_grad, weight.requires_grad
    cols_saved = cols if need_w else None
    wm_saved = capture(weight).reshape(O, -1) if need_x else None

    def adjoint(g):
        gm = g.reshape(B, O, Ho * Wo)
        gw = gb = gx = None
        if need_w:
            gw = np.matmul(gm, cols_saved.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = gm.sum(axis=(0, 2))
        if need_x:
            dcols = np.matmul(wm_saved.T, gm).reshape(B, C, kh, kw, Ho, Wo)
            gx = np.zeros((B, C, Hp, Wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += dcols[:, :, i, j]
        return (gx, gw) if bias is None else (gx, gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, adjoint, "conv2d")


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    pad_mode: str = "zeros",
) -> Tensor:
    """2-D cross-correlation of a B x C x H x W input with an O x C x kH x kW kernel."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects 4-d input and weight")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"channel mismatch: input {x.shape[1]}, weight expects {weight.shape[1]}")
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError("bias shape must equal (out_channels,)")
    kh, kw = weight.shape[2:]
    if x.shape[2] + 2 * padding < kh or x.shape[3] + 2 * padding < kw:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input")
    if padding:
        x = pad2d(x, padding, pad_mode)
    return _conv_valid(x, weight, bias, stride)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map on the trailing axis: ``x @ weight.T + bias``."""
    out_f, in_f = weight.shape
    if x.shape[-1] != in_f:
        raise ValueError(f"linear expects trailing extent {in_f}, got {x.shape[-1]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, in_f)
    out = x2 @ weight.data.T
    if bias is not None:
        out = out + bias.data
    x_saved = capture(x).reshape(-1, in_f) if weight.requires_grad else None
    w_saved = capture(weight) if x.requires_grad else None

    def adjoint(g):
        g2 = g.reshape(-1, out_f)
        gx = (g2 @ w_saved).reshape(x.shape) if w_saved is not None else None
        gw = g2.T @ x_saved if x_saved is not None else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out.reshape(*lead, out_f), inputs, adjoint, "linear")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the trailing (channel) axis, then scale and shift."""
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError("gamma/beta must match the trailing extent")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = (xc * rstd).astype(x.dtype)
    gam = capture(gamma)

    def adjoint(g):
        dxhat = g * gam
        gx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx.astype(g.dtype), (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_result(xhat * gamma.data + beta.data, (x, gamma, beta), adjoint, "layer_norm")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    y.flags.writeable = False
    return make_result(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    d = capture(x)
    cdf = 0.5 * (1.0 + erf(d / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * d * d) / np.sqrt(2.0 * np.pi)

    def adjoint(g):
        return ((g * (cdf + d * pdf)).astype(g.dtype),)

    return make_result((d * cdf).astype(x.dtype), (x,), adjoint, "gelu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    y.flags.writeable = False

    def adjoint(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), adjoint, "softmax")


def pool_channel(x: Tensor, mode: str = "max", axis: int = 1) -> Tensor:
    """Reduce across the channel axis keeping it as extent 1.

    Max-mode gradients go to the first (lowest-index) maximal channel.
    """
    if x.shape[axis] < 1:
        raise ValueError("empty channel axis")
    if mode == "max":
        idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
        out = np.take_along_axis(x.data, idx, axis=axis)
        shape, dtype = x.shape, x.dtype

        def adjoint(g):
            gx = np.zeros(shape, dtype=dtype)
            np.put_along_axis(gx, idx, g, axis=axis)
            return (gx,)

        return make_result(out, (x,), adjoint, "pool_channel[max]")
    if mode == "avg":
        n = x.shape[axis]
        shape = x.shape
        return make_result(
            x.data.mean(axis=axis, keepdims=True),
            (x,),
            lambda g: (np.broadcast_to(g / n, shape).copy(),),
            "pool_channel[avg]",
        )
    raise ValueError(f"unknown pool mode {mode!r}")


def _shuffle(a: np.ndarray, s: int) -> np.ndarray:
    B, Cs, H, W = a.shape
    C = Cs // (s * s)
    return a.reshape(B, C, s, s, H, W).transpose(0, 1, 4, 2, 5, 3).reshape(B, C, H * s, W * s)


def _unshuffle(a: np.ndarray, s: int) -> np.ndarray:
    B, C, Hs, Ws = a.shape
    H, W = Hs // s, Ws // s
    return a.reshape(B, C, H, s, W, s).transpose(0, 1, 3, 5, 2, 4).reshape(B, C * s * s, H, W)


def pixel_shuffle(x: Tensor, s: int) -> Tensor:
    """Depth-to-space: B x (C*s*s) x H x W -> B x C x sH x sW."""
    if x.shape[1] % (s * s):
        raise ValueError(f"channels {x.shape[1]} not divisible by {s * s}")
    return make_result(_shuffle(x.data, s), (x,), lambda g: (_unshuffle(g, s),), "pixel_shuffle")


def pixel_unshuffle(x: Tensor, s: int) -> Tensor:
    """Space-to-depth, the exact inverse of :func:`pixel_shuffle`."""
    if x.shape[2] % s or x.shape[3] % s:
        raise ValueError(f"spatial extents {x.shape[2:]} not divisible by {s}")
    return make_result(_unshuffle(x.data, s), (x,), lambda g: (_shuffle(g, s),), "pixel_unshuffle")
