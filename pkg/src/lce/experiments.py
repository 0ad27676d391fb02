"""Desk-scale experiments: the toy two-stage pipeline and the case1/2/3
ablation harness, built from bundled natural images."""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import analysis
from .config import RunConfig
from .data import PairedDataset, load_dataset, natural_crops, write_png
from .degrade import KernelDistribution, synth_dataset
from .nets.blocks import CorrectorConfig
from .nets.model import MODES, SrConfig
from .train import (MetricsTable, TrainConfig, apply_corrector, bicubic_predictor, corrector_predictor, evaluate,
                    sr_predictor, train_corrector, train_sr)

# disjoint source images so held-out crops never overlap training crops
TRAIN_SOURCES = ("astronaut", "rocket", "immunohistochemistry", "hubble_deep_field", "retina", "colorwheel",
                 "brick", "grass", "gravel")
TEST_SOURCES = ("coffee", "chelsea", "camera")


@dataclass(frozen=True)
class ToySetup:
    n_train: int = 40
    n_test: int = 8
    hr_size: int = 128
    scale: int = 2
    sigma_range: tuple = (0.2, 2.0)
    data_seed: int = 0
    corrector_steps: int = 2000
    sr_steps: int = 3000
    corrector_lr: float = 2e-3
    sr_lr: float = 2e-4
    batch: int = 4
    lr_patch: int = 24
    channels: int = 32
    window: int = 8
    heads: int = 4
    seed: int = 0

    def run_config(self, stage: str, mode: str = "case3", seed: Optional[int] = None,
                   steps: Optional[int] = None) -> RunConfig:
        dist = dataclasses.replace(KernelDistribution.default("isotropic", self.scale), sigma_range=self.sigma_range)
        first = stage == "corrector"
        train = TrainConfig(stage=stage, steps=steps or (self.corrector_steps if first else self.sr_steps),
                            batch=self.batch, lr_patch=self.lr_patch, lr=self.corrector_lr if first else self.sr_lr,
                            seed=self.seed if seed is None else seed)
        sr = SrConfig.tiny(channels=self.channels, scale=self.scale, window=self.window, heads=self.heads)
        return RunConfig(dist, CorrectorConfig.tiny(self.channels), sr, train, mode)


def make_toy_data(root, setup: ToySetup) -> tuple[PairedDataset, PairedDataset]:
    """Write HR crops and their degraded triplets under ``root``; load both splits."""
    root = Path(root)
    dist = setup.run_config("corrector").data
    out = []
    for split, n, sources, offset in (("train", setup.n_train, TRAIN_SOURCES, 0),
                                      ("test", setup.n_test, TEST_SOURCES, 1)):
        src = root / f"hr_{split}"
        src.mkdir(parents=True, exist_ok=True)
        for i, crop in enumerate(natural_crops(n, setup.hr_size, setup.data_seed + offset, sources)):
            write_png(src / f"{i:04d}.png", crop)
        synth_dataset(src, dist, n, setup.data_seed + offset, root / split)
        out.append(load_dataset(root / split))
    return out[0], out[1]


@dataclass
class ToyResult:
    corrector_table: MetricsTable
    lr_table: MetricsTable
    sr_table: MetricsTable
    bicubic_table: MetricsTable
    corrector_losses: list
    sr_losses: list
    corrector_ckpt: Path
    sr_ckpt: Path
    error_report: analysis.ErrorReport
    lr_error_report: analysis.ErrorReport
    files: list = field(default_factory=list)


def run_toy(root, setup: ToySetup = ToySetup(), mode: str = "case3",
            log: Optional[Callable[[str], None]] = None) -> ToyResult:
    root = Path(root)
    train, test = make_toy_data(root / "data", setup)
    ccfg = setup.run_config("corrector", mode)
    cdir = root / "corrector"
    rc = train_corrector(train, ccfg.corrector, ccfg.train, cdir, ccfg.to_text(), log=log)
    ccfg.save(cdir / "config.txt")
    corr_table = evaluate(test, corrector_predictor(rc.module), target="clr_gt")
    lr_table = evaluate(test, lambda lr: lr, target="clr_gt")
    corr_table.write(cdir / "eval_clr.tsv")
    lr_table.write(cdir / "eval_lr_identity.tsv")

    est = apply_corrector(rc.module, test.lr)
    report = analysis.error_report([analysis.correction_error(e, g) for e, g in zip(est, test.clr_gt)])
    lr_report = analysis.error_report([analysis.correction_error(l, g) for l, g in zip(test.lr, test.clr_gt)])
    files = analysis.write_report(report, root / "analysis", "corrected")
    files += analysis.write_report(lr_report, root / "analysis", "uncorrected")

    scfg = setup.run_config("sr", mode)
    sdir = root / f"sr_{mode}"
    rs = train_sr(train, rc.module.state_dict(), scfg.corrector, scfg.sr, scfg.train, mode, sdir, scfg.to_text(),
                  log=log)
    scfg.save(sdir / "config.txt")
    sr_table = evaluate(test, sr_predictor(rs.module))
    bic_table = evaluate(test, bicubic_predictor(setup.scale))
    sr_table.write(sdir / "eval_sr.tsv")
    bic_table.write(sdir / "eval_bicubic.tsv")
    files += [cdir / "eval_clr.tsv", cdir / "eval_lr_identity.tsv", sdir / "eval_sr.tsv", sdir / "eval_bicubic.tsv"]
    return ToyResult(corr_table, lr_table, sr_table, bic_table, rc.losses, rs.losses, rc.checkpoints[-1],
                     rs.checkpoints[-1], report, lr_report, files)


@dataclass
class AblationRow:
    mode: str
    seed: int
    psnr: float
    ssim: float


def run_ablation(root, setup: ToySetup, corrector_state: dict, train: PairedDataset, test: PairedDataset,
                 seeds: Sequence[int] = (0, 1, 2), modes: Sequence[str] = MODES, sr_steps: Optional[int] = None,
                 log: Optional[Callable[[str], None]] = None) -> list[AblationRow]:
    """Train and evaluate the Super Resolver once per (mode, seed) with one shared Corrector."""
    root = Path(root)
    rows = []
    for mode in modes:
        for seed in seeds:
            cfg = setup.run_config("sr", mode, seed=seed, steps=sr_steps)
            out = root / f"{mode}_seed{seed}"
            res = train_sr(train, corrector_state if mode != "case1" else None, cfg.corrector, cfg.sr, cfg.train,
                           mode, out, cfg.to_text(), log=log)
            table = evaluate(test, sr_predictor(res.module))
            table.write(out / "eval_sr.tsv")
            rows.append(AblationRow(mode, seed, table.mean_psnr, table.mean_ssim))
    write_ablation(root / "ablation.tsv", rows)
    return rows


def summarize_ablation(rows: Sequence[AblationRow]) -> dict:
    """Per mode: (psnr mean, psnr std, ssim mean, ssim std, n)."""
    out = {}
    for mode in dict.fromkeys(r.mode for r in rows):
        p = np.array([r.psnr for r in rows if r.mode == mode])
        s = np.array([r.ssim for r in rows if r.mode == mode])
        out[mode] = (float(p.mean()), float(p.std()), float(s.mean()), float(s.std()), len(p))
    return out


def expected_order_holds(summary: dict) -> bool:
    """case3 >= case1 >= case2 on mean PSNR."""
    m = {k: v[0] for k, v in summary.items()}
    return m["case3"] >= m["case1"] >= m["case2"]


def write_ablation(path, rows: Sequence[AblationRow]) -> None:
    """Per-seed rows to ``path``; means and spreads to ``<stem>_summary.tsv``."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, delimiter="\t", lineterminator="\n")
        wr.writerow(["mode", "seed", "psnr", "ssim"])
        for r in rows:
            wr.writerow([r.mode, r.seed, f"{r.psnr:.4f}", f"{r.ssim:.4f}"])
    with open(path.with_name(path.stem + "_summary.tsv"), "w", newline="") as f:
        wr = csv.writer(f, delimiter="\t", lineterminator="\n")
        wr.writerow(["mode", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std", "n_seeds"])
        for mode, (pm, ps, sm, ss, n) in summarize_ablation(rows).items():
            wr.writerow([mode, f"{pm:.4f}", f"{ps:.4f}", f"{sm:.4f}", f"{ss:.4f}", n])
