"""Two-stage training (Corrector, then Super Resolver with the Corrector
frozen), the Adam optimizer, and PSNR/SSIM evaluation tables."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import metrics
from .data import PairedDataset, batch_rng, sample_patches, write_png
from .degrade import bicubic_resize
from .nets.blocks import Corrector, CorrectorConfig
from .nets.checkpoint import Checkpoint, save_checkpoint
from .nets.model import MODES, LceModel, SrConfig
from .nets.module import Module
from .tensor import Parameter, Tape, Tensor, backward, no_record
from .tensor import abs as tabs

STAGES = ("corrector", "sr")


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "corrector"
    steps: int = 1000
    batch: int = 8
    lr_patch: int = 48
    lr: float = 2e-4
    milestones: tuple = (0.5, 0.75, 0.9)   # fractions of ``steps`` where the rate halves
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    seed: int = 0
    augment: bool = True
    checkpoint_every: int = 0               # 0: final checkpoint only

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        if self.steps < 1 or self.batch < 1 or self.lr_patch < 1:
            raise ValueError("steps, batch and lr_patch must be positive")
        if self.lr <= 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ValueError("invalid optimizer settings")
        if any(not 0 < m < 1 for m in self.milestones):
            raise ValueError("milestones are fractions in (0, 1)")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")

    def lr_at(self, step: int) -> float:
        """Rate for 0-based ``step``: halved once per milestone already passed."""
        passed = sum(1 for m in self.milestones if step >= int(round(m * self.steps)))
        return self.lr * 0.5 ** passed


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def entries(self) -> dict:
        out = {"opt.step": np.array([self.step], dtype=np.int64)}
        for k in self.m:
            out[f"opt.m.{k}"] = self.m[k]
            out[f"opt.v.{k}"] = self.v[k]
        return out

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "OptimizerState":
        st = cls(step=int(ckpt.tensors["opt.step"][0]))
        for k, a in ckpt.prefixed("opt.m").items():
            st.m[k] = a.copy()
            st.v[k] = ckpt.tensors[f"opt.v.{k}"].copy()
        return st


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error (subgradient 0 at ties)."""
    if not isinstance(target, Tensor):
        target = Tensor(np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return tabs(pred - target).mean()


def adam_step(params: Sequence[tuple[str, Parameter]], state: OptimizerState, lr: float,
              betas: tuple = (0.9, 0.99), eps: float = 1e-8) -> None:
    """One bias-corrected Adam update of every parameter with ``requires_grad``."""
    b1, b2 = betas
    live = [(n, p) for n, p in params if p.requires_grad]
    missing = [n for n, p in live if p.grad is None]
    if missing:
        raise ValueError(f"no gradient for unfrozen parameters: {missing[:5]}")
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in live:
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        if state.m[name].shape != p.shape:
            raise ValueError(f"{name}: optimizer slot shape {state.m[name].shape} != {p.shape}")
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - step).astype(p.dtype)


@dataclass
class TrainResult:
    module: Module
    losses: list
    state: OptimizerState
    checkpoints: list = field(default_factory=list)


def block_means(losses: Sequence[float], window: int = 50) -> np.ndarray:
    """Means of consecutive non-overlapping ``window``-step blocks (tail dropped)."""
    x = np.asarray(losses, dtype=np.float64)
    n = len(x) // window
    return x[:n * window].reshape(n, window).mean(axis=1)


def write_loss_curve(path, losses: Sequence[float]) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, delimiter="\t", lineterminator="\n")
        wr.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            wr.writerow([i, repr(float(v))])


def _run(model: Module, named: list, loss_at: Callable[[int], Tensor], cfg: TrainConfig, state: OptimizerState,
         losses: list, start: int, param_entries: Callable[[], dict], config_text: str,
         out_dir: Optional[Path], log: Optional[Callable[[str], None]]) -> list:
    ckpts = []
    for step in range(start, cfg.steps):
        model.zero_grad()
        with Tape() as tape:
            loss = loss_at(step)
        backward(loss, tape)
        adam_step(named, state, cfg.lr_at(step), (cfg.beta1, cfg.beta2), cfg.eps)
        losses.append(float(loss.data))
        done = step + 1
        if log is not None and (done % 100 == 0 or done == cfg.steps):
            log(f"{cfg.stage} step {done}/{cfg.steps} loss {np.mean(losses[-100:]):.5f}")
        if out_dir is not None and (done == cfg.steps or (cfg.checkpoint_every and done % cfg.checkpoint_every == 0)):
            tensors = dict(param_entries())
            tensors.update(state.entries())
            tensors["meta.step"] = np.array([done], dtype=np.int64)
            tensors["meta.losses"] = np.asarray(losses, dtype=np.float64)
            path = out_dir / f"{cfg.stage}_{done:06d}.lcec"
            save_checkpoint(path, Checkpoint(config_text, tensors))
            write_loss_curve(out_dir / f"{cfg.stage}_loss.tsv", losses)
            ckpts.append(path)
    model.zero_grad()
    return ckpts


def _resume(ckpt: Optional[Checkpoint], config_text: str, model: Module, prefix: str = ""):
    if ckpt is None:
        return OptimizerState(), [], 0
    if ckpt.config_text != config_text:
        raise ValueError("resume checkpoint was written with a different config")
    model.load_state_dict(ckpt.prefixed(prefix) if prefix else
                          {k: v for k, v in ckpt.tensors.items() if not k.startswith(("opt.", "meta."))})
    return (OptimizerState.from_checkpoint(ckpt), [float(v) for v in ckpt.tensors["meta.losses"]],
            int(ckpt.tensors["meta.step"][0]))


def _check_dataset(dataset: PairedDataset, cfg: TrainConfig) -> None:
    if len(dataset) == 0:
        raise ValueError("empty training set")
    small = [i for i, a in enumerate(dataset.lr) if min(a.shape[:2]) < cfg.lr_patch]
    if small:
        raise ValueError(f"images {small[:5]} are smaller than lr_patch {cfg.lr_patch}")


def train_corrector(dataset: PairedDataset, corrector_cfg: CorrectorConfig, cfg: TrainConfig,
                    out_dir=None, config_text: str = "", resume: Optional[Checkpoint] = None,
                    log: Optional[Callable[[str], None]] = None) -> TrainResult:
    """Fit ``Corrector(lr) ~ clr_gt`` with L1 on random aligned crops.

    Checkpoint parameter names carry a ``corrector.`` prefix so they load
    straight into :class:`LceModel`.
    """
    if cfg.stage != "corrector":
        raise ValueError("train_corrector needs stage=corrector")
    _check_dataset(dataset, cfg)
    corrector = Corrector(corrector_cfg, np.random.default_rng(cfg.seed), dataset.lr[0].shape[-1])
    state, losses, start = _resume(resume, config_text, corrector, "corrector")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def loss_at(step):
        lr_b, gt_b = sample_patches([dataset.lr, dataset.clr_gt], [1, 1], cfg.batch, cfg.lr_patch,
                                    batch_rng(cfg.seed, step), cfg.augment)
        return l1_loss(corrector(Tensor(lr_b)), gt_b)

    named = corrector.trainable()
    entries = lambda: {f"corrector.{k}": v for k, v in corrector.state_dict().items()}  # noqa: E731
    ckpts = _run(corrector, named, loss_at, cfg, state, losses, start, entries, config_text, out, log)
    return TrainResult(corrector, losses, state, ckpts)


def apply_corrector(corrector: Module, images: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Corrector output for each full H x W x C image (no gradient tracking)."""
    out = []
    with no_record():
        for img in images:
            y = corrector(Tensor(np.ascontiguousarray(img.transpose(2, 0, 1)[None], dtype=np.float32)))
            out.append(np.ascontiguousarray(y.data[0].transpose(1, 2, 0)))
    return out


def build_sr_model(corrector_cfg: CorrectorConfig, sr_cfg: SrConfig, mode: str, seed: int,
                   corrector_state: Optional[dict] = None, in_channels: int = 3) -> LceModel:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    model = LceModel(corrector_cfg, sr_cfg, mode, seed=seed, in_channels=in_channels)
    if mode != "case1":
        if corrector_state is None:
            raise ValueError(f"{mode} needs a trained corrector checkpoint")
        model.corrector.load_state_dict(corrector_state)
        model.corrector.freeze()
    return model


def train_sr(dataset: PairedDataset, corrector_state: Optional[dict], corrector_cfg: CorrectorConfig,
             sr_cfg: SrConfig, cfg: TrainConfig, mode: str = "case3", out_dir=None, config_text: str = "",
             resume: Optional[Checkpoint] = None, log: Optional[Callable[[str], None]] = None) -> TrainResult:
    """Fit the Super Resolver with L1 against HR, the Corrector frozen.

    case1 sees LR only. case2 is trained on ground-truth CLR inputs (a classic
    SR model on clean bicubic pairs) and tested on corrector output. case3
    sees LR plus the frozen corrector's CLR estimate, computed once per
    training image.
    """
    if cfg.stage != "sr":
        raise ValueError("train_sr needs stage=sr")
    if sr_cfg.scale != dataset.scale:
        raise ValueError(f"model scale {sr_cfg.scale} != dataset scale {dataset.scale}")
    if cfg.lr_patch % sr_cfg.window:
        raise ValueError(f"lr_patch {cfg.lr_patch} must be a multiple of window {sr_cfg.window}")
    _check_dataset(dataset, cfg)
    model = build_sr_model(corrector_cfg, sr_cfg, mode, cfg.seed, corrector_state, dataset.lr[0].shape[-1])
    state, losses, start = _resume(resume, config_text, model)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    s = dataset.scale
    if mode == "case1":
        streams = [dataset.lr, dataset.hr]
    elif mode == "case2":
        streams = [dataset.clr_gt, dataset.hr]
    else:
        streams = [dataset.lr, apply_corrector(model.corrector, dataset.lr), dataset.hr]
    scales = [1] * (len(streams) - 1) + [s]

    def loss_at(step):
        crops = sample_patches(streams, scales, cfg.batch, cfg.lr_patch, batch_rng(cfg.seed, step), cfg.augment)
        if mode == "case1":
            sr, _ = model(Tensor(crops[0]))
        elif mode == "case2":
            sr, _ = model(Tensor(crops[0]), Tensor(crops[0]))
        else:
            sr, _ = model(Tensor(crops[0]), Tensor(crops[1]))
        return l1_loss(sr, crops[-1])

    ckpts = _run(model, model.trainable(), loss_at, cfg, state, losses, start, model.state_dict, config_text,
                 out, log)
    return TrainResult(model, losses, state, ckpts)


# evaluation ---------------------------------------------------------------

@dataclass
class MetricsTable:
    rows: list            # (image_id, psnr, ssim)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows]))

    def write(self, path) -> None:
        with open(path, "w", newline="") as f:
            wr = csv.writer(f, delimiter="\t", lineterminator="\n")
            wr.writerow(["image_id", "psnr", "ssim"])
            for name, p, q in self.rows:
                wr.writerow([name, f"{p:.6f}", f"{q:.6f}"])
            wr.writerow(["mean", f"{self.mean_psnr:.6f}", f"{self.mean_ssim:.6f}"])


def quantize8(img: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid, as a saved PNG would be."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def sr_predictor(model: LceModel) -> Callable[[np.ndarray], np.ndarray]:
    def predict(lr):
        with no_record():
            x = Tensor(np.ascontiguousarray(lr.transpose(2, 0, 1)[None], dtype=np.float32))
            # case2/case3 take the corrector's estimate at test time
            sr, _ = model(x)
        return sr.data[0].transpose(1, 2, 0)
    return predict


def bicubic_predictor(scale: int) -> Callable[[np.ndarray], np.ndarray]:
    return lambda lr: bicubic_resize(np.asarray(lr, dtype=np.float64), scale)


def corrector_predictor(corrector: Module) -> Callable[[np.ndarray], np.ndarray]:
    return lambda lr: apply_corrector(corrector, [lr])[0]


def evaluate(dataset: PairedDataset, predict: Callable[[np.ndarray], np.ndarray], target: str = "hr",
             shave: Optional[int] = None, dump_dir=None) -> MetricsTable:
    """PSNR / SSIM on luma between ``predict(lr)`` (8-bit rounded) and ``target``.

    ``target`` is ``"hr"`` for SR outputs or ``"clr_gt"`` for corrector
    outputs. ``shave`` defaults to the scale factor.
    """
    if target not in ("hr", "clr_gt"):
        raise ValueError("target must be 'hr' or 'clr_gt'")
    shave = dataset.scale if shave is None else shave
    refs = dataset.hr if target == "hr" else dataset.clr_gt
    if dump_dir is not None:
        Path(dump_dir).mkdir(parents=True, exist_ok=True)
    rows = []
    for name, lr, ref in zip(dataset.names, dataset.lr, refs):
        out = quantize8(np.asarray(predict(lr), dtype=np.float64))
        if out.shape != ref.shape:
            raise ValueError(f"{name}: prediction {out.shape} vs reference {ref.shape}")
        ref = np.asarray(ref, dtype=np.float64)
        rows.append((name, metrics.psnr(out, ref, shave), metrics.ssim(out, ref, shave)))
        if dump_dir is not None:
            write_png(Path(dump_dir) / f"{name}.png", out)
    return MetricsTable(rows)
