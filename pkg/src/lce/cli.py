"""Command-line entry point: ``lce synth|train|eval|analyze|verify|info``.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 I/O error. ``LCE_THREADS`` caps BLAS threads (read before numpy loads).
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _apply_threads() -> None:
    n = os.environ.get("LCE_THREADS")
    if n:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = n


def _say(msg: str) -> None:
    print(msg, flush=True)


def _run_config(args):
    from .config import RunConfig, parse_lines
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = parse_lines(getattr(args, "set", None) or [])
    return cfg.replace(overrides) if overrides else cfg


def _add_config_args(p) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")


def load_model(ckpt_path):
    """Rebuild the module a checkpoint was written from: (RunConfig, module)."""
    from .config import RunConfig
    from .nets.blocks import Corrector
    from .nets.checkpoint import load_checkpoint
    from .nets.model import LceModel
    import numpy as np

    ckpt = load_checkpoint(ckpt_path)
    cfg = RunConfig.from_text(ckpt.config_text)
    if cfg.train.stage == "corrector":
        mod = Corrector(cfg.corrector, np.random.default_rng(0))
        mod.load_state_dict(ckpt.prefixed("corrector"))
    else:
        mod = LceModel(cfg.corrector, cfg.sr, cfg.mode, seed=0)
        mod.load_state_dict({k: v for k, v in ckpt.tensors.items() if not k.startswith(("opt.", "meta."))})
    return cfg, mod, ckpt


# -- synth ------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .data import natural_crops, write_png
    from .degrade import synth_dataset
    import dataclasses

    cfg = _run_config(args)
    dist = cfg.data
    if args.kind:
        dist = dataclasses.replace(type(dist).default(args.kind, args.scale or dist.scale),
                                   noise_range=dist.noise_range)
    elif args.scale:
        dist = dataclasses.replace(dist, scale=args.scale)
    cfg = type(cfg)(dist, cfg.corrector, cfg.sr, cfg.train, cfg.mode)
    out = Path(args.out)
    hr_dir = args.hr_dir
    if hr_dir is None and args.count > 0:
        hr_dir = out / "hr_source"
        hr_dir.mkdir(parents=True, exist_ok=True)
        for i, crop in enumerate(natural_crops(args.count, args.crop, args.seed)):
            write_png(hr_dir / f"{i:04d}.png", crop)
    rows = synth_dataset(hr_dir or out, dist, args.count, args.seed, out)
    cfg.save(out / "config.txt")
    _say(f"wrote {len(rows)} samples to {out} (kind={dist.kind}, scale={dist.scale})")
    if rows:
        key = "sigma" if dist.kind == "isotropic" else "lambda1"
        vals = [float(r[key]) for r in rows]
        _say(f"{key}: min {min(vals):.4f} max {max(vals):.4f} mean {sum(vals) / len(vals):.4f}")
    return EXIT_OK


# -- train ------------------------------------------------------------------

def cmd_train(args) -> int:
    import dataclasses
    from .data import load_dataset
    from .experiments import AblationRow, write_ablation
    from .nets.checkpoint import load_checkpoint
    from .train import evaluate, sr_predictor, train_corrector, train_sr

    cfg = _run_config(args)
    tr = dataclasses.replace(cfg.train, stage=args.stage, **({"steps": args.steps} if args.steps else {}))
    modes = args.modes.split(",") if args.modes else [args.mode or cfg.mode]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [tr.seed]
    dataset = load_dataset(args.data)
    if dataset.scale != cfg.data.scale:
        cfg = cfg.replace({"data.scale": str(dataset.scale)})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.stage == "corrector":
        cfg = type(cfg)(cfg.data, cfg.corrector, cfg.sr, tr, cfg.mode)
        resume = load_checkpoint(args.resume) if args.resume else None
        if resume is not None and resume.config_text != cfg.to_text():
            raise UsageError("resume checkpoint config digest differs from the resolved config")
        cfg.save(out / "config.txt")
        res = train_corrector(dataset, cfg.corrector, cfg.train, out, cfg.to_text(), resume, log=_say)
        _say(f"final loss {res.losses[-1]:.5f}; checkpoints: {', '.join(str(p) for p in res.checkpoints)}")
        return EXIT_OK

    corrector_state = None
    if any(m != "case1" for m in modes):
        if not args.corrector:
            raise UsageError(f"stage sr with mode {','.join(m for m in modes if m != 'case1')} needs a trained "
                             "corrector: pass --corrector PATH (produce one with `lce train --stage corrector`)")
        ccfg, corrector, _ = load_model(args.corrector)
        if ccfg.train.stage != "corrector":
            raise UsageError(f"{args.corrector} is not a corrector checkpoint")
        cfg = type(cfg)(cfg.data, ccfg.corrector, cfg.sr, cfg.train, cfg.mode)
        corrector_state = corrector.state_dict()
    multi = len(modes) * len(seeds) > 1
    if multi and not args.test:
        raise UsageError("the ablation driver (--modes / --seeds) needs --test DIR for evaluation")
    test = load_dataset(args.test) if args.test else None
    rows = []
    for mode in modes:
        for seed in seeds:
            run = type(cfg)(cfg.data, cfg.corrector, cfg.sr, dataclasses.replace(tr, seed=seed), mode)
            sub = out / f"{mode}_seed{seed}" if multi else out
            sub.mkdir(parents=True, exist_ok=True)
            resume = load_checkpoint(args.resume) if args.resume and not multi else None
            if resume is not None and resume.config_text != run.to_text():
                raise UsageError("resume checkpoint config digest differs from the resolved config")
            run.save(sub / "config.txt")
            res = train_sr(dataset, corrector_state if mode != "case1" else None, run.corrector, run.sr, run.train,
                           mode, sub, run.to_text(), resume, log=_say)
            _say(f"{mode} seed {seed}: final loss {res.losses[-1]:.5f}; checkpoint {res.checkpoints[-1]}")
            if test is not None:
                table = evaluate(test, sr_predictor(res.module))
                table.write(sub / "eval_sr.tsv")
                rows.append(AblationRow(mode, seed, table.mean_psnr, table.mean_ssim))
                _say(f"{mode} seed {seed}: PSNR {table.mean_psnr:.3f} SSIM {table.mean_ssim:.4f}")
    if rows:
        write_ablation(out / "ablation.tsv", rows)
        _say(f"wrote {out / 'ablation.tsv'}")
    return EXIT_OK


# -- eval -------------------------------------------------------------------

def cmd_eval(args) -> int:
    from .data import load_dataset
    from .train import bicubic_predictor, corrector_predictor, evaluate, sr_predictor

    dataset = load_dataset(args.data)
    if args.baseline == "bicubic":
        predict, target = bicubic_predictor(dataset.scale), "hr"
    elif args.baseline == "identity":
        predict, target = (lambda lr: lr), "clr_gt"
    else:
        if not args.checkpoint:
            raise UsageError("eval needs --checkpoint unless --baseline is given")
        cfg, mod, ckpt = load_model(args.checkpoint)
        if args.digest and ckpt.digest.hex() != args.digest.lower():
            raise UsageError(f"config digest mismatch: checkpoint has {ckpt.digest.hex()}")
        if cfg.data.scale != dataset.scale:
            raise UsageError(f"checkpoint is for x{cfg.data.scale}, dataset is x{dataset.scale}")
        if cfg.train.stage == "corrector":
            predict, target = corrector_predictor(mod), "clr_gt"
        else:
            predict, target = sr_predictor(mod), "hr"
    table = evaluate(dataset, predict, target, shave=args.shave, dump_dir=args.dump)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.write(out)
    _say(f"{len(table.rows)} images: PSNR {table.mean_psnr:.3f} dB, SSIM {table.mean_ssim:.4f} -> {out}")
    return EXIT_OK


# -- analyze ----------------------------------------------------------------

def cmd_analyze(args) -> int:
    from . import analysis
    from .data import load_dataset
    from .train import apply_corrector
    import numpy as np

    dataset = load_dataset(args.data)
    out = Path(args.out)
    cfg, mod, _ = load_model(args.corrector)
    if cfg.train.stage != "corrector":
        mod = mod.corrector
        if mod is None:
            raise UsageError("checkpoint has no corrector (case1)")
    est = apply_corrector(mod, dataset.lr)
    maps = [analysis.correction_error(e, g) for e, g in zip(est, dataset.clr_gt)]
    base = [analysis.correction_error(l, g) for l, g in zip(dataset.lr, dataset.clr_gt)]
    rep = analysis.error_report(maps)
    analysis.write_report(rep, out, "corrected")
    analysis.write_report(analysis.error_report(base), out, "uncorrected")
    cfg.save(out / "config.txt")
    _say(f"corrected: mu {rep.mu:.5f} b {rep.b:.5f} high_freq_ratio {rep.high_freq_ratio:.4f} -> {out}")
    if args.features:
        # layer names are relative to the corrector, e.g. head,groups.0
        layers = [s for s in args.features.split(",") if s]
        x = np.ascontiguousarray(dataset.lr[args.image].transpose(2, 0, 1)[None])
        paths = analysis.dump_feature_maps(mod, x, layers, out / "features")
        _say(f"wrote {len(paths)} feature maps")
    return EXIT_OK


# -- verify / info ----------------------------------------------------------

def cmd_verify(args) -> int:
    from .verify import run_suite
    checks = run_suite(args.suite, seed=args.seed, log=_say)
    failed = [c for c in checks if not c.passed]
    _say(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_info(args) -> int:
    from .nets import LceModel, count_multadds, count_params
    cfg = _run_config(args)
    if args.info_mode:
        cfg = cfg.replace({"run.mode": args.info_mode})
    h, w = (int(v) for v in args.size.lower().split("x"))
    model = LceModel(cfg.corrector, cfg.sr, cfg.mode, seed=0)
    _say(f"mode {cfg.mode}, scale x{cfg.sr.scale}, mult-adds at {h}x{w} LR")
    _say(f"{'component':24s} {'params':>12s} {'mult-adds(G)':>14s}")
    groups: dict[str, list] = {}
    for name, child in model.named_children():
        groups.setdefault(name.split(".")[0], []).append(child)
    win = cfg.sr.window
    hp, wp = h + (-h) % win, w + (-w) % win
    for g, mods in groups.items():
        n = sum(m.num_params() for m in mods)
        if g == "body":
            ma = sum(m.multadds(hp, wp) for m in mods)
        elif g == "conv_last":
            ma = sum(m.multadds(h * cfg.sr.scale, w * cfg.sr.scale) for m in mods)
        else:
            ma = sum(m.multadds(h, w) for m in mods)
        _say(f"{g:24s} {n:12d} {ma / 1e9:14.3f}")
    total, ma = count_params(model), count_multadds(model, h, w)
    _say(f"{'total':24s} {total:12d} {ma / 1e9:14.3f}")
    _say(f"total params {total / 1e6:.2f}M, mult-adds {ma / 1e9:.2f}G")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lce", description="Blind super-resolution by learning correction errors")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize (HR, LR, CLR) triplets")
    s.add_argument("--out", required=True)
    s.add_argument("--hr-dir", help="directory of HR PNGs (default: bundled natural-image crops)")
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--kind", choices=("isotropic", "anisotropic"))
    s.add_argument("--scale", type=int, choices=(2, 4))
    s.add_argument("--crop", type=int, default=128, help="crop side when using bundled images")
    _add_config_args(s)
    s.set_defaults(fn=cmd_synth)

    t = sub.add_parser("train", help="train the corrector or the super resolver")
    t.add_argument("--stage", choices=("corrector", "sr"), required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--mode", choices=("case1", "case2", "case3"))
    t.add_argument("--modes", help="comma-separated modes for the ablation driver")
    t.add_argument("--seeds", help="comma-separated seeds for the ablation driver")
    t.add_argument("--test", help="held-out dataset for ablation evaluation")
    t.add_argument("--corrector", help="corrector checkpoint (required for case2/case3)")
    t.add_argument("--steps", type=int)
    t.add_argument("--resume", help="checkpoint to resume from")
    _add_config_args(t)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="PSNR/SSIM table on a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="metrics TSV path")
    e.add_argument("--checkpoint")
    e.add_argument("--baseline", choices=("bicubic", "identity"))
    e.add_argument("--dump", help="directory for output PNGs")
    e.add_argument("--shave", type=int)
    e.add_argument("--digest", help="expected config digest (hex)")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("analyze", help="correction-error statistics")
    a.add_argument("--corrector", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--features", help="comma-separated layer names to dump as PNGs")
    a.add_argument("--image", type=int, default=0)
    a.set_defaults(fn=cmd_analyze)

    v = sub.add_parser("verify", help="run self-verification suites")
    v.add_argument("suite", choices=("fft", "grad", "kernels", "params", "all"))
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(fn=cmd_verify)

    i = sub.add_parser("info", help="parameter and mult-add counts")
    i.add_argument("--size", default="180x320", help="LR input size HxW")
    i.add_argument("--mode", dest="info_mode", choices=("case1", "case2", "case3"))
    _add_config_args(i)
    i.set_defaults(fn=cmd_info)
    return p


def main(argv=None) -> int:
    _apply_threads()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    from .config import ConfigError
    from .nets.checkpoint import CheckpointError
    try:
        return args.fn(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, CheckpointError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
