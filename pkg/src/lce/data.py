"""Image I/O, on-disk dataset loading, and deterministic patch sampling."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .degrade import read_manifest

NATURAL_SOURCES = (
    "astronaut", "coffee", "chelsea", "rocket", "immunohistochemistry", "hubble_deep_field",
    "retina", "colorwheel", "brick", "grass", "gravel", "camera",
)


def read_png(path) -> np.ndarray:
    """8-bit image as float64 H x W x 3 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img: np.ndarray) -> None:
    q = quantize(img)
    if q.ndim == 3 and q.shape[-1] == 1:
        q = q[..., 0]
    Image.fromarray(q).save(path, format="PNG")


def load_natural(name: str) -> np.ndarray:
    """A bundled scikit-image sample as float64 RGB."""
    from skimage import data as skdata

    img = np.asarray(getattr(skdata, name)())
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    return img[..., :3].astype(np.float64) / 255.0


def natural_crops(n: int, size: int, seed: int, sources: Optional[Sequence[str]] = None) -> list[np.ndarray]:
    """``n`` deterministic ``size x size`` RGB crops cycling over ``sources``."""
    sources = list(sources or NATURAL_SOURCES)
    rng = np.random.default_rng(seed)
    cache: dict[str, np.ndarray] = {}
    crops = []
    for i in range(n):
        name = sources[i % len(sources)]
        img = cache.get(name)
        if img is None:
            img = cache[name] = load_natural(name)
        y = int(rng.integers(0, img.shape[0] - size + 1))
        x = int(rng.integers(0, img.shape[1] - size + 1))
        crops.append(img[y:y + size, x:x + size].copy())
    return crops


@dataclass
class PairedDataset:
    """Aligned HR / LR / CLR-ground-truth images (H x W x 3, float32)."""

    hr: list
    lr: list
    clr_gt: list
    scale: int
    names: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.lr)

    def __post_init__(self):
        if not (len(self.hr) == len(self.lr) == len(self.clr_gt)):
            raise ValueError("hr/lr/clr_gt lists differ in length")
        if not self.names:
            self.names = [f"{i:04d}" for i in range(len(self.lr))]
        for h, l, c in zip(self.hr, self.lr, self.clr_gt):
            if l.shape != c.shape or h.shape[0] != l.shape[0] * self.scale or h.shape[1] != l.shape[1] * self.scale:
                raise ValueError("inconsistent triplet shapes")

    @classmethod
    def from_triplets(cls, triplets, scale: int) -> "PairedDataset":
        f32 = lambda a: np.asarray(a, dtype=np.float32)  # noqa: E731
        return cls([f32(t.hr) for t in triplets], [f32(t.lr) for t in triplets],
                   [f32(t.clr_gt) for t in triplets], scale)

    def subset(self, idx: Sequence[int]) -> "PairedDataset":
        return PairedDataset([self.hr[i] for i in idx], [self.lr[i] for i in idx], [self.clr_gt[i] for i in idx],
                             self.scale, [self.names[i] for i in idx])


def load_dataset(root) -> PairedDataset:
    """Read a directory written by :func:`lce.degrade.synth_dataset`."""
    root = Path(root)
    rows = read_manifest(root / "manifest.tsv")
    if not rows:
        raise ValueError(f"{root} holds no samples")
    scales = {int(r["scale"]) for r in rows}
    if len(scales) != 1:
        raise ValueError("mixed scales in one dataset")
    hr, lr, clr = [], [], []
    for r in rows:
        name = r["index"]
        hr.append(read_png(root / "hr" / f"{name}.png").astype(np.float32))
        lr.append(read_png(root / "lr" / f"{name}.png").astype(np.float32))
        clr.append(read_png(root / "clr_gt" / f"{name}.png").astype(np.float32))
    return PairedDataset(hr, lr, clr, scales.pop(), [r["index"] for r in rows])


def to_bchw(imgs: Sequence[np.ndarray]) -> np.ndarray:
    return np.ascontiguousarray(np.stack(imgs).transpose(0, 3, 1, 2))


def from_bchw(batch: np.ndarray) -> list[np.ndarray]:
    return list(np.asarray(batch).transpose(0, 2, 3, 1))


def augment(img: np.ndarray, code: int) -> np.ndarray:
    """Dihedral transform ``code`` in 0..7 (rot90 count + horizontal flip) of H x W x C."""
    out = np.rot90(img, code % 4, axes=(0, 1))
    if code >= 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def batch_rng(seed: int, step: int, slot: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, step, slot])


def sample_patches(images: Sequence[Sequence[np.ndarray]], scales: Sequence[int], batch: int, patch: int,
                   rng: np.random.Generator, augment_data: bool = True) -> list[np.ndarray]:
    """Aligned random crops from parallel image lists.

    ``images[j][i]`` is image ``i`` of stream ``j`` at ``scales[j]`` times the
    base (LR) resolution. Returns one B x C x h x w array per stream.
    """
    n = len(images[0])
    picks = rng.integers(0, n, size=batch)
    out = [[] for _ in images]
    for i in picks:
        base = images[0][i]
        h, w = base.shape[0] // scales[0], base.shape[1] // scales[0]
        if h < patch or w < patch:
            raise ValueError(f"image {i} ({h}x{w}) smaller than patch {patch}")
        y = int(rng.integers(0, h - patch + 1))
        x = int(rng.integers(0, w - patch + 1))
        code = int(rng.integers(0, 8)) if augment_data else 0
        for j, (stream, s) in enumerate(zip(images, scales)):
            crop = stream[i][y * s:(y + patch) * s, x * s:(x + patch) * s]
            out[j].append(augment(crop, code))
    return [to_bchw(o) for o in out]
