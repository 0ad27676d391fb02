"""Shifted-window self-attention, the frequency-self attention block and group."""
from __future__ import annotations

from functools import lru_cache
from typing import Optional

import numpy as np

from .. import ops
from ..tensor import Parameter, Tensor, get_default_dtype, roll, take
from .fab import FAB
from .module import Conv2d, LayerNorm, Linear, Module, trunc_normal


def window_partition(x: Tensor, w: int) -> Tensor:
    """B x H x W x C -> (B * nW) x (w * w) x C."""
    B, H, W, C = x.shape
    x = x.reshape(B, H // w, w, W // w, w, C).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(B * (H // w) * (W // w), w * w, C)


def window_reverse(xw: Tensor, w: int, B: int, H: int, W: int) -> Tensor:
    C = xw.shape[-1]
    x = xw.reshape(B, H // w, W // w, w, w, C).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(B, H, W, C)


@lru_cache(maxsize=None)
def relative_position_index(w: int) -> np.ndarray:
    coords = np.stack(np.meshgrid(np.arange(w), np.arange(w), indexing="ij")).reshape(2, -1)
    rel = (coords[:, :, None] - coords[:, None, :]).transpose(1, 2, 0) + (w - 1)
    return rel[:, :, 0] * (2 * w - 1) + rel[:, :, 1]


@lru_cache(maxsize=None)
def shift_mask(H: int, W: int, w: int, shift: int) -> np.ndarray:
    """Additive attention mask (nW x N x N) keeping cyclically shifted regions apart."""
    img = np.zeros((H, W))
    cnt = 0
    for hs in (slice(0, -w), slice(-w, -shift), slice(-shift, None)):
        for ws in (slice(0, -w), slice(-w, -shift), slice(-shift, None)):
            img[hs, ws] = cnt
            cnt += 1
    mw = img.reshape(H // w, w, W // w, w).transpose(0, 2, 1, 3).reshape(-1, w * w)
    diff = mw[:, None, :] - mw[:, :, None]
    return np.where(diff != 0, -100.0, 0.0)


class WindowAttention(Module):
    """Multi-head self-attention inside each window, with relative position bias."""

    def __init__(self, dim: int, window: int, heads: int, rng: np.random.Generator, qkv_bias: bool = True,
                 position_bias: bool = True):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim, self.window, self.heads = dim, window, heads
        self.scale = (dim // heads) ** -0.5
        self.rel_bias = Parameter(trunc_normal(rng, ((2 * window - 1) ** 2, heads))) if position_bias else None
        self.qkv = Linear(dim, 3 * dim, rng, bias=qkv_bias)
        self.proj = Linear(dim, dim, rng)
        self.keep_attention = False
        self.last_attention: Optional[np.ndarray] = None

    def forward(self, xw: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        Bn, N, C = xw.shape
        h, d = self.heads, C // self.heads
        qkv = self.qkv(xw).reshape(Bn, N, 3, h, d).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0] * self.scale, qkv[1], qkv[2]
        attn = q @ k.transpose(0, 1, 3, 2)
        if self.rel_bias is not None:
            idx = relative_position_index(self.window)
            bias = take(self.rel_bias, idx.reshape(-1)).reshape(N, N, h).transpose(2, 0, 1)
            attn = attn + bias
        if mask is not None:
            nw = mask.shape[0]
            m = Tensor(mask.astype(attn.dtype)[None, :, None])
            attn = (attn.reshape(Bn // nw, nw, h, N, N) + m).reshape(Bn, h, N, N)
        attn = ops.softmax(attn, axis=-1)
        if self.keep_attention:
            self.last_attention = attn.data
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(Bn, N, C)
        return self.proj(out)

    def multadds(self, h: int, w: int) -> int:
        tokens = h * w
        n = self.window * self.window
        c = self.dim
        return (self.qkv.tokens_multadds(tokens) + 2 * tokens * n * c + self.proj.tokens_multadds(tokens))


class FSAB(Module):
    """LN -> (window attention + alpha * FAB + identity) -> LN -> MLP, with residual.

    Operates on B x H x W x C tokens whose spatial extents are window multiples.
    """

    def __init__(self, dim: int, heads: int, window: int, shift: bool, mlp_ratio: float, fab_squeeze: int,
                 rng: np.random.Generator, alpha_init: float = 0.01, position_bias: bool = True):
        self.window = window
        self.shift = window // 2 if shift else 0
        self.norm1 = LayerNorm(dim)
        self.attn = WindowAttention(dim, window, heads, rng, position_bias=position_bias)
        self.fab = FAB(dim, fab_squeeze, rng)
        self.alpha = Parameter(np.full(1, alpha_init, dtype=get_default_dtype()))
        self.norm2 = LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)
        self.branches = ("attn", "fab")

    def _attention(self, x1: Tensor) -> Tensor:
        B, H, W, C = x1.shape
        w = self.window
        shift = self.shift if min(H, W) > w else 0
        x = roll(x1, (-shift, -shift), (1, 2)) if shift else x1
        mask = shift_mask(H, W, w, shift) if shift else None
        y = window_reverse(self.attn(window_partition(x, w), mask), w, B, H, W)
        return roll(y, (shift, shift), (1, 2)) if shift else y

    def forward(self, x: Tensor) -> Tensor:
        B, H, W, C = x.shape
        if H % self.window or W % self.window:
            raise ValueError(f"spatial size {H}x{W} not a multiple of window {self.window}")
        x1 = self.norm1(x)
        x2 = x1
        if "attn" in self.branches:
            x2 = x2 + self._attention(x1)
        if "fab" in self.branches:
            f = self.fab(x1.transpose(0, 3, 1, 2)).transpose(0, 2, 3, 1)
            x2 = x2 + self.alpha * f
        return self.fc2(ops.gelu(self.fc1(self.norm2(x2)))) + x2

    def multadds(self, h: int, w: int) -> int:
        tokens = h * w
        return (self.attn.multadds(h, w) + self.fab.multadds(h, w)
                + self.fc1.tokens_multadds(tokens) + self.fc2.tokens_multadds(tokens))


class FSAG(Module):
    """FSABs with alternating window shift, a 3x3 conv, and a skip (B x C x H x W in/out)."""

    def __init__(self, dim: int, n_blocks: int, heads: int, window: int, mlp_ratio: float, fab_squeeze: int,
                 rng: np.random.Generator, alpha_init: float = 0.01, position_bias: bool = True):
        self.blocks = [
            FSAB(dim, heads, window, i % 2 == 1, mlp_ratio, fab_squeeze, rng, alpha_init, position_bias)
            for i in range(n_blocks)
        ]
        self.conv = Conv2d(dim, dim, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        t = x.transpose(0, 2, 3, 1)
        for b in self.blocks:
            t = b(t)
        return self.conv(t.transpose(0, 3, 1, 2)) + x
