"""Synthetic blind-SR degradations: y = (x * k) downsampled by s, plus noise.

Images here are plain float64 numpy arrays in [0, 1], H x W or H x W x C.
Nothing in this module is differentiated, so it stays outside the tape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from . import spectral
from .tensor import Tensor, save_tensor

__all__ = [
    "GaussianKernelSpec",
    "DegradationSpec",
    "KernelDistribution",
    "Triplet",
    "render_kernel",
    "blur",
    "cubic",
    "resize_weights",
    "bicubic_resize",
    "degrade",
    "effective_kernel_l",
    "circular_convolve",
    "synth_dataset",
    "MANIFEST_COLUMNS",
]


@dataclass(frozen=True)
class GaussianKernelSpec:
    """Isotropic (``sigma``) or anisotropic (covariance eigenvalues + angle) Gaussian."""

    kind: str = "isotropic"
    sigma: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    theta: float = 0.0
    size: int = 21

    @classmethod
    def delta(cls, size: int = 3) -> "GaussianKernelSpec":
        # off-centre taps underflow to exactly 0 at this sigma
        return cls(kind="isotropic", sigma=0.01, size=size)


@dataclass(frozen=True)
class DegradationSpec:
    kernel: GaussianKernelSpec
    scale: int = 2
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if not 0 <= self.noise_sigma < 1:
            raise ValueError("noise_sigma must lie in [0, 1)")


@dataclass
class Triplet:
    hr: np.ndarray
    lr: np.ndarray
    clr_gt: np.ndarray


def render_kernel(spec: GaussianKernelSpec) -> np.ndarray:
    """Sampled 2-D Gaussian density on a ``size x size`` grid, summing to 1."""
    size = spec.size
    if size < 3 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 3, got {size}")
    r = size // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    if spec.kind == "isotropic":
        if spec.sigma <= 0:
            raise ValueError("sigma must be positive")
        q = (xx * xx + yy * yy) / (spec.sigma * spec.sigma)
    elif spec.kind == "anisotropic":
        if spec.lambda1 <= 0 or spec.lambda2 <= 0:
            raise ValueError("lambda1/lambda2 must be positive")
        c, s = math.cos(spec.theta), math.sin(spec.theta)
        # inverse covariance R diag(1/l1, 1/l2) R^T, coordinates (x, y)
        a = c * c / spec.lambda1 + s * s / spec.lambda2
        b = c * s * (1.0 / spec.lambda1 - 1.0 / spec.lambda2)
        d = s * s / spec.lambda1 + c * c / spec.lambda2
        q = a * xx * xx + 2 * b * xx * yy + d * yy * yy
    else:
        raise ValueError(f"unknown kernel kind {spec.kind!r}")
    k = np.exp(-0.5 * q)
    return k / k.sum()


def blur(x: np.ndarray, k: np.ndarray, boundary: str = "reflect") -> np.ndarray:
    """True 2-D convolution of each channel with ``k`` (same output size).

    ``reflect`` mirrors without repeating the edge pixel; ``circular`` wraps.
    """
    if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise ValueError(f"kernel must be 2-d with odd extents, got {k.shape}")
    mode = {"reflect": "mirror", "circular": "wrap"}.get(boundary)
    if mode is None:
        raise ValueError(f"unknown boundary {boundary!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return ndimage.convolve(x, k, mode=mode)
    return np.stack([ndimage.convolve(x[..., c], k, mode=mode) for c in range(x.shape[-1])], axis=-1)


def cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def resize_weights(in_len: int, out_len: int, scale: float, antialias: bool, boundary: str = "symmetric"):
    """Per-output-sample (indices, weights) for 1-D cubic resampling.

    Follows the classic MATLAB ``imresize`` construction: output sample ``i``
    maps to input coordinate ``(i + 0.5) / scale - 0.5`` and, when shrinking
    with ``antialias``, the cubic is stretched by ``1 / scale``.
    """
    stretch = scale < 1 and antialias
    width = 4.0 / scale if stretch else 4.0
    u = (np.arange(out_len, dtype=np.float64) + 0.5) / scale - 0.5
    left = np.floor(u - width / 2).astype(np.int64) + 1
    taps = int(math.ceil(width)) + 1
    idx = left[:, None] + np.arange(taps)[None, :]
    dist = u[:, None] - idx
    w = scale * cubic(scale * dist) if stretch else cubic(dist)
    w = w / w.sum(axis=1, keepdims=True)
    if boundary == "symmetric":
        period = np.concatenate([np.arange(in_len), np.arange(in_len)[::-1]])
        idx = period[np.mod(idx, 2 * in_len)]
    elif boundary == "circular":
        idx = np.mod(idx, in_len)
    else:
        raise ValueError(f"unknown boundary {boundary!r}")
    return idx, w


def _resize_axis(x: np.ndarray, axis: int, out_len: int, scale: float, antialias: bool, boundary: str) -> np.ndarray:
    idx, w = resize_weights(x.shape[axis], out_len, scale, antialias, boundary)
    xm = np.moveaxis(x, axis, 0)
    out = np.einsum("ok,ok...->o...", w, xm[idx])
    return np.moveaxis(out, 0, axis)


def bicubic_resize(x: np.ndarray, scale: float, antialias: bool = True, boundary: str = "symmetric") -> np.ndarray:
    """Separable bicubic resize (a = -0.5) of the two leading axes by ``scale``."""
    x = np.asarray(x, dtype=np.float64)
    if scale == 1:
        return x.copy()
    H, W = x.shape[:2]
    oh, ow = (int(math.ceil(n * scale - 1e-9)) for n in (H, W))
    if oh < 1 or ow < 1:
        raise ValueError(f"degenerate output size {oh}x{ow}")
    out = _resize_axis(x, 0, oh, scale, antialias, boundary)
    return _resize_axis(out, 1, ow, scale, antialias, boundary)


def degrade(x: np.ndarray, spec: DegradationSpec, boundary: str = "reflect") -> Triplet:
    """Blur, anti-aliased bicubic downsample, add Gaussian noise, clip to [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    s = spec.scale
    if x.shape[0] % s or x.shape[1] % s:
        raise ValueError(f"HR extents {x.shape[:2]} not divisible by scale {s}")
    k = render_kernel(spec.kernel)
    lr = bicubic_resize(blur(x, k, boundary), 1.0 / s, antialias=True)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        lr = lr + rng.normal(0.0, spec.noise_sigma, size=lr.shape)
    clr_gt = bicubic_resize(x, 1.0 / s, antialias=True)
    return Triplet(hr=x, lr=np.clip(lr, 0.0, 1.0), clr_gt=np.clip(clr_gt, 0.0, 1.0))


def _spectrum(img: np.ndarray) -> spectral.SpectrumTensor:
    return spectral.rfft2(Tensor(np.asarray(img, dtype=np.float64)))


def circular_convolve(img: np.ndarray, kernel_centered: np.ndarray) -> np.ndarray:
    """Circular convolution with an image-sized kernel whose origin sits at the centre."""
    H, W = img.shape
    K = np.fft.rfft2(np.fft.ifftshift(kernel_centered))
    return np.fft.irfft2(np.fft.rfft2(img) * K, s=(H, W))


def effective_kernel_l(x: np.ndarray, k: np.ndarray, s: int, eps: Optional[float] = None,
                       rel_eps: float = 1e-12) -> np.ndarray:
    """Kernel acting on the clean downsampled image: F^-1(F((x*k)down) / F(x down)).

    Computed noise-free with circular boundaries. Returns an image-sized kernel
    (LR extents) with its origin moved to the centre. Multi-channel input gives
    one kernel per channel, stacked on the last axis.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return np.stack([effective_kernel_l(x[..., c], k, s, eps, rel_eps) for c in range(x.shape[-1])], axis=-1)
    y = bicubic_resize(blur(x, k, "circular"), 1.0 / s, antialias=True, boundary="circular")
    xd = bicubic_resize(x, 1.0 / s, antialias=True, boundary="circular")
    den = _spectrum(xd)
    if not np.any(den.complex()):
        raise ValueError("downsampled image has an identically zero spectrum")
    q = spectral.dft_divide(_spectrum(y), den, eps=eps, rel_eps=rel_eps)
    kl = spectral.irfft2(q).data
    return np.fft.fftshift(kl)


# ---------------------------------------------------------------------------
# dataset synthesis


@dataclass(frozen=True)
class KernelDistribution:
    """Sampling ranges for random degradations (all bounds inclusive-uniform)."""

    kind: str = "isotropic"
    scale: int = 2
    sigma_range: tuple = (0.2, 2.0)
    lambda_range: tuple = (0.6, 5.0)
    theta_range: tuple = (0.0, math.pi)
    size: int = 21
    noise_range: tuple = (0.0, 0.0)

    @classmethod
    def default(cls, kind: str = "isotropic", scale: int = 2) -> "KernelDistribution":
        if kind == "isotropic":
            return cls(kind=kind, scale=scale, sigma_range=(0.2, 2.0 if scale == 2 else 4.0), size=21)
        if kind == "anisotropic":
            return cls(kind=kind, scale=scale, size=11 if scale == 2 else 31)
        raise ValueError(f"unknown kernel kind {kind!r}")

    def sample(self, rng: np.random.Generator, seed: int) -> DegradationSpec:
        if self.kind == "isotropic":
            kspec = GaussianKernelSpec("isotropic", sigma=float(rng.uniform(*self.sigma_range)), size=self.size)
        else:
            kspec = GaussianKernelSpec(
                "anisotropic",
                lambda1=float(rng.uniform(*self.lambda_range)),
                lambda2=float(rng.uniform(*self.lambda_range)),
                theta=float(rng.uniform(*self.theta_range)),
                size=self.size,
            )
        noise = float(rng.uniform(*self.noise_range)) if self.noise_range[1] > 0 else 0.0
        return DegradationSpec(kspec, scale=self.scale, noise_sigma=noise, seed=seed)


MANIFEST_COLUMNS = ("index", "source", "kind", "sigma", "lambda1", "lambda2", "theta", "size", "scale",
                    "noise_sigma", "seed")


def _sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


def synth_dataset(hr_dir, distribution: KernelDistribution, count: int, seed: int, out_dir,
                  min_size: int = 16) -> list[dict]:
    """Degrade HR PNGs into ``hr/ lr/ clr_gt/ kernels/`` plus ``manifest.tsv``.

    Sample ``i`` uses image ``i mod n`` (sorted by name) and an RNG keyed by
    ``(seed, i)``. Returns the manifest rows.
    """
    from .data import read_png, write_png

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sources = sorted(Path(hr_dir).glob("*.png"))
    if count > 0 and not sources:
        raise FileNotFoundError(f"no PNG images in {hr_dir}")
    rows = []
    if count > 0:
        for sub in ("hr", "lr", "clr_gt", "kernels"):
            (out_dir / sub).mkdir(exist_ok=True)
    for i in range(count):
        src = sources[i % len(sources)]
        hr = read_png(src)
        s = distribution.scale
        h, w = (hr.shape[0] // s) * s, (hr.shape[1] // s) * s
        if min(h, w) < min_size:
            raise ValueError(f"{src.name} is smaller than the minimum crop {min_size}")
        hr = hr[:h, :w]
        sample_seed = _sample_seed(seed, i)
        spec = distribution.sample(np.random.default_rng(sample_seed), sample_seed)
        trip = degrade(hr, spec)
        name = f"{i:04d}"
        write_png(out_dir / "hr" / f"{name}.png", trip.hr)
        write_png(out_dir / "lr" / f"{name}.png", trip.lr)
        write_png(out_dir / "clr_gt" / f"{name}.png", trip.clr_gt)
        save_tensor(out_dir / "kernels" / f"{name}.lcet", render_kernel(spec.kernel))
        k = spec.kernel
        rows.append({
            "index": name, "source": src.name, "kind": k.kind, "sigma": repr(k.sigma),
            "lambda1": repr(k.lambda1), "lambda2": repr(k.lambda2), "theta": repr(k.theta),
            "size": str(k.size), "scale": str(s), "noise_sigma": repr(spec.noise_sigma), "seed": str(sample_seed),
        })
    write_manifest(out_dir / "manifest.tsv", rows)
    return rows


def write_manifest(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="\n") as f:
        f.write("\t".join(MANIFEST_COLUMNS) + "\n")
        for r in rows:
            f.write("\t".join(r[c] for c in MANIFEST_COLUMNS) + "\n")


def read_manifest(path) -> list[dict]:
    with open(path) as f:
        header = f.readline().rstrip("\n").split("\t")
        return [dict(zip(header, line.rstrip("\n").split("\t"))) for line in f if line.strip()]
