"""PSNR and SSIM on the luma channel.

Images are float arrays in [0, 1], either H x W x 3 RGB (converted to luma
first) or single-channel H x W / H x W x 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2

# BT.601 studio-swing luma on 0..255 inputs
_Y_WEIGHTS = np.array([65.481, 128.553, 24.966])


@dataclass(frozen=True)
class MetricResult:
    psnr_db: float
    ssim: float
    shave: int


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """H x W x 3 RGB in [0, 1] -> H x W x 1 luma in [16/255, 235/255]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"rgb_to_y expects H x W x 3, got {img.shape}")
    y = (img @ _Y_WEIGHTS + 16.0) / 255.0
    return np.clip(y, 0.0, 1.0)[..., None]


def _luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[-1] == 3:
        return rgb_to_y(img)[..., 0]
    if img.ndim == 3 and img.shape[-1] == 1:
        return img[..., 0]
    if img.ndim == 2:
        return img
    raise ValueError(f"expected H x W, H x W x 1 or H x W x 3, got {img.shape}")


def _shave(y: np.ndarray, shave: int) -> np.ndarray:
    if shave < 0 or 2 * shave >= min(y.shape):
        raise ValueError(f"shave {shave} too large for {y.shape}")
    return y[shave:y.shape[0] - shave, shave:y.shape[1] - shave] if shave else y


def psnr(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    """PSNR in dB of the luma channels, ``PSNR_CAP`` when the images agree."""
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")
    ya, yb = _shave(_luma(a), shave), _shave(_luma(b), shave)
    mse = float(np.mean((ya - yb) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2
    g = np.exp(-t * t / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    y = correlate1d(correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return y[r:x.shape[0] - r, r:x.shape[1] - r]


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Local SSIM over the valid region of the 11 x 11 Gaussian window."""
    x, y = _luma(a), _luma(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + C1) * (2 * sxy + C2)
    den = (mx * mx + my * my + C1) * (sxx + syy + C2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")
    x, y = _shave(_luma(a), shave), _shave(_luma(b), shave)
    return float(np.mean(ssim_map(x, y)))


def evaluate_pair(sr: np.ndarray, hr: np.ndarray, shave: int) -> MetricResult:
    return MetricResult(psnr(sr, hr, shave), ssim(sr, hr, shave), shave)
