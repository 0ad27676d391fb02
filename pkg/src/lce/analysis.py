"""Correction-error statistics: error maps, Laplace fit, histograms, radial
power spectra, and feature-map export."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .tensor import Tensor, no_record

HIST_BINS = 201
HIST_RANGE = (-0.5, 0.5)
HIGH_FREQ_CUTOFF = 0.25  # half of the Nyquist radius 0.5 (cycles / sample)


def correction_error(clr_est: np.ndarray, clr_gt: np.ndarray) -> np.ndarray:
    """``clr_gt - clr_est``."""
    clr_est = np.asarray(clr_est, dtype=np.float64)
    clr_gt = np.asarray(clr_gt, dtype=np.float64)
    if clr_est.shape != clr_gt.shape:
        raise ValueError(f"shape mismatch {clr_est.shape} vs {clr_gt.shape}")
    return clr_gt - clr_est


def laplace_fit(errors: np.ndarray) -> tuple[float, float]:
    """Maximum-likelihood Laplace fit: location = median, scale = mean |x - median|."""
    x = np.asarray(errors, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("laplace_fit needs at least one sample")
    mu = float(np.median(x))
    return mu, float(np.mean(np.abs(x - mu)))


def error_histogram(errors: np.ndarray, bins: int = HIST_BINS, lo: float = HIST_RANGE[0],
                    hi: float = HIST_RANGE[1]) -> tuple[np.ndarray, np.ndarray]:
    """Counts over equal bins on [lo, hi]; values outside land in the edge bins."""
    x = np.asarray(errors, dtype=np.float64).ravel()
    counts, edges = np.histogram(np.clip(x, lo, hi), bins=bins, range=(lo, hi))
    return counts, edges


@dataclass
class RadialSpectrum:
    radius: np.ndarray          # bin centres in cycles / sample
    energy: np.ndarray          # |F|^2 / N summed per bin
    mean_log_magnitude: np.ndarray
    count: np.ndarray           # frequency samples per bin
    total_energy: float
    dc_energy: float
    high_freq_ratio: float


def _radial_bins(h: int, w: int, n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    u = np.fft.fftfreq(h)[:, None]
    v = np.fft.fftfreq(w)[None, :]
    r = np.sqrt(u * u + v * v)
    idx = np.minimum(np.floor(r / 0.5 * (n_bins - 1) + 0.5).astype(int), n_bins - 1)
    return r, idx


def spectrum_radial(errors: np.ndarray, n_bins: Optional[int] = None) -> RadialSpectrum:
    """Radially binned power spectrum of an H x W map (or H x W x C, channels summed).

    Radius is the normalized frequency sqrt((u/H)^2 + (v/W)^2); bins are
    integer multiples of 1 / max(H, W) by default, with everything beyond
    Nyquist folded into the last bin. Energies use the 1/N convention so that
    they sum to the spatial energy.
    """
    x = np.asarray(errors, dtype=np.float64)
    if x.ndim == 2:
        x = x[..., None]
    if x.ndim != 3:
        raise ValueError(f"expected a 2-d map, got {np.shape(errors)}")
    h, w = x.shape[:2]
    if h < 2 or w < 2:
        raise ValueError(f"map {h}x{w} too small for a spectrum")
    if n_bins is None:
        n_bins = max(h, w) // 2 + 1
    power = (np.abs(np.fft.fft2(x, axes=(0, 1))) ** 2).sum(axis=2) / (h * w)
    r, idx = _radial_bins(h, w, n_bins)
    energy = np.bincount(idx.ravel(), weights=power.ravel(), minlength=n_bins)
    count = np.bincount(idx.ravel(), minlength=n_bins)
    logmag = np.log(np.sqrt(power) + 1e-12)
    mean_log = np.bincount(idx.ravel(), weights=logmag.ravel(), minlength=n_bins) / np.maximum(count, 1)
    ac = power.copy()
    ac[0, 0] = 0.0
    rest = float(ac.sum())
    hf = min(1.0, float(ac[r > HIGH_FREQ_CUTOFF].sum()) / rest) if rest > 0 else 0.0
    radius = np.arange(n_bins) * 0.5 / (n_bins - 1) if n_bins > 1 else np.zeros(1)
    return RadialSpectrum(radius, energy, mean_log, count, float(power.sum()), float(power[0, 0]), hf)


@dataclass
class ErrorReport:
    mu: float
    b: float
    histogram: np.ndarray
    bin_edges: np.ndarray
    radial: RadialSpectrum
    high_freq_ratio: float
    n: int

    def stats(self) -> dict:
        return {"n": self.n, "mu": self.mu, "b": self.b, "high_freq_ratio": self.high_freq_ratio,
                "total_energy": self.radial.total_energy}


def error_report(maps: Sequence[np.ndarray], n_bins: Optional[int] = None) -> ErrorReport:
    """Pool statistics over error maps of possibly different sizes.

    The radial profile uses a common bin count (that of the smallest map) and
    sums energies; the high-frequency ratio is energy-weighted across maps.
    """
    maps = [np.asarray(m, dtype=np.float64) for m in maps]
    if not maps:
        raise ValueError("error_report needs at least one map")
    flat = np.concatenate([m.ravel() for m in maps])
    mu, b = laplace_fit(flat)
    hist, edges = error_histogram(flat)
    if n_bins is None:
        n_bins = min(max(m.shape[:2]) // 2 + 1 for m in maps)
    specs = [spectrum_radial(m, n_bins) for m in maps]
    energy = np.sum([s.energy for s in specs], axis=0)
    count = np.sum([s.count for s in specs], axis=0)
    mean_log = np.sum([s.mean_log_magnitude * s.count for s in specs], axis=0) / np.maximum(count, 1)
    ac = np.array([s.total_energy - s.dc_energy for s in specs])
    hf = min(1.0, float(np.dot(ac, [s.high_freq_ratio for s in specs]) / ac.sum())) if ac.sum() > 0 else 0.0
    radial = RadialSpectrum(specs[0].radius, energy, mean_log, count, float(energy.sum()),
                            float(sum(s.dc_energy for s in specs)), hf)
    return ErrorReport(mu, b, hist, edges, radial, hf, int(flat.size))


def write_report(report: ErrorReport, out_dir, prefix: str = "error") -> list[Path]:
    """Write ``<prefix>_stats.tsv``, ``<prefix>_hist.tsv`` and ``<prefix>_radial.tsv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{prefix}_stats.tsv", out / f"{prefix}_hist.tsv", out / f"{prefix}_radial.tsv"]
    with open(paths[0], "w", newline="") as f:
        wr = csv.writer(f, delimiter="\t", lineterminator="\n")
        wr.writerow(["stat", "value"])
        for k, v in report.stats().items():
            wr.writerow([k, repr(v) if isinstance(v, float) else v])
    centres = 0.5 * (report.bin_edges[:-1] + report.bin_edges[1:])
    with open(paths[1], "w", newline="") as f:
        wr = csv.writer(f, delimiter="\t", lineterminator="\n")
        wr.writerow(["bin_center", "count"])
        for c, n in zip(centres, report.histogram):
            wr.writerow([f"{c:.6f}", int(n)])
    rs = report.radial
    with open(paths[2], "w", newline="") as f:
        wr = csv.writer(f, delimiter="\t", lineterminator="\n")
        wr.writerow(["radius_bin", "radius", "mean_log_magnitude", "energy", "count"])
        for i in range(len(rs.energy)):
            wr.writerow([i, f"{rs.radius[i]:.6f}", f"{rs.mean_log_magnitude[i]:.6f}", repr(float(rs.energy[i])),
                         int(rs.count[i])])
    return paths


def _normalize(ch: np.ndarray) -> np.ndarray:
    lo, hi = float(ch.min()), float(ch.max())
    if hi <= lo:
        return np.zeros(ch.shape, dtype=np.uint8)
    return np.round((ch - lo) / (hi - lo) * 255.0).astype(np.uint8)


def dump_feature_maps(model, x: np.ndarray, layers: Sequence[str], out_dir,
                      channels: Optional[Sequence[int]] = None, **forward_kwargs) -> list[Path]:
    """Run ``model`` on a 1 x C x H x W input and save selected activations.

    Each selected channel of each named layer becomes a min-max normalized
    grayscale PNG ``<layer>_c<idx>.png``. Channel-last outputs (window
    attention blocks) are detected by the module type.
    """
    from .nets.swin import FSAB

    modules = dict(model.named_modules())
    unknown = [n for n in layers if n not in modules or n == ""]
    if unknown:
        raise KeyError(f"unknown layers: {unknown}")
    captured: dict[str, np.ndarray] = {}
    for name in layers:
        mod = modules[name]
        channel_last = isinstance(mod, FSAB)

        def sink(out, name=name, channel_last=channel_last):
            arr = out.data if isinstance(out, Tensor) else np.asarray(out[0].data)
            captured[name] = arr.transpose(0, 3, 1, 2) if channel_last else arr

        mod.set_sink(sink)
    try:
        with no_record():
            model(Tensor(np.asarray(x, dtype=np.float32)), **forward_kwargs)
    finally:
        for name in layers:
            modules[name].set_sink(None)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in layers:
        act = captured[name][0]
        sel = range(act.shape[0]) if channels is None else channels
        for c in sel:
            p = out / f"{name}_c{c:03d}.png"
            Image.fromarray(_normalize(act[c])).save(p, format="PNG")
            paths.append(p)
    return paths
