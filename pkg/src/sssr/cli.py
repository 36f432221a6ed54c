"""Command-line entry point.

Subcommands: simulate | train | eval | infer | gradcheck.  Every command
honors --config (JSON), --seed, and --out (base directory for the relative
dataset/checkpoint/report paths).  Delimited outputs are always accompanied
by rendered figures.  Exit codes: 0 success, 1 internal failure, 2 invalid
input or configuration; failures print one machine-parsable "error: ..." line.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import figures
from .baseline import fit_spectral_regression  # noqa: F401  (re-exported for scripts)
from .checkpoint import (CheckpointData, CheckpointError, apply_params,
                         load_checkpoint, save_checkpoint)
from .config import ConfigError, RunConfig, load_config
from .cube import (FormatError, ImageCube, IngestionError, balanced_response,
                   default_spec, load_hsc, save_hsc)
from .gradcheck_suite import run_checks
from .metrics import write_metrics_csv
from .pipeline import Pipeline, build_pipeline, parameter_signature
from .simulate import load_samples, synth_dataset
from .train import TrainSchedule, evaluate_model, train_phase1, train_phase2


class CliError(ValueError):
    """User-facing input problem (missing file, bad value): exit code 2."""


def _load_run_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["training.seed"] = args.seed
    return load_config(args.config, overrides)


def _base(args) -> Path:
    return Path(args.out) if args.out else Path(".")


def _resolve(base: Path, leaf: str) -> Path:
    leaf = Path(leaf)
    return leaf if leaf.is_absolute() else base / leaf


def _write_history_csv(history, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    if not history:
        path.write_text("epoch,train_loss,val_psnr\n")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(history[0].keys()))
        writer.writeheader()
        writer.writerows(history)


def cmd_simulate(args) -> int:
    cfg = _load_run_config(args)
    d = cfg.dims
    spec = default_spec(d.s, d.C, d.c, noise_sigma=cfg.data.noise_sigma,
                        blur_std=cfg.data.blur_std,
                        blur_support=cfg.data.blur_support)
    out_dir = _resolve(_base(args), cfg.paths.dataset)
    manifests = synth_dataset(out_dir, cfg.training.seed, cfg.data.count,
                              {"H": d.H, "W": d.W, "C": d.C}, spec,
                              split=cfg.data.split,
                              endmembers=cfg.data.endmembers)
    for name, manifest in manifests.items():
        print(f"{name}: {len(manifest.samples)} samples -> {out_dir / (name + '.json')}")
    return 0


def _load_split_samples(cfg: RunConfig, base: Path, split: str):
    manifest = _resolve(base, cfg.paths.dataset) / f"{split}.json"
    if not manifest.exists():
        raise CliError(f"missing manifest {manifest}; run simulate first")
    return load_samples(manifest)


def _build_model(cfg: RunConfig, train_samples=None) -> Pipeline:
    model = build_pipeline(cfg)
    if cfg.model.cluster_mode == "kmeans":
        if not train_samples:
            raise CliError("kmeans cluster mode needs training data to fit centroids")
        pixels = np.concatenate(
            [s["f"].reshape(-1, cfg.dims.c) for s in train_samples])
        rng = np.random.default_rng([cfg.training.seed, 3])
        take = max(model.ssr.clusters,
                   int(round(cfg.training.kmeans_fraction * len(pixels))))
        chosen = rng.choice(len(pixels), size=min(take, len(pixels)), replace=False)
        model.ssr.fit_clusters(pixels[chosen], iters=cfg.training.kmeans_iters,
                               seed=cfg.training.seed)
    return model


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    base = _base(args)
    train_samples = _load_split_samples(cfg, base, "train")
    val_samples = _load_split_samples(cfg, base, "val")
    schedule = TrainSchedule.from_settings(cfg.training)
    ckpt_dir = _resolve(base, cfg.paths.checkpoints)
    report_dir = _resolve(base, cfg.paths.reports)
    seed = cfg.training.seed

    phases = [1, 2] if args.phase == "both" else [int(args.phase)]
    model = None
    if 1 in phases:
        model = _build_model(cfg, train_samples)
        print(parameter_signature(model, cfg))
        result = train_phase1(train_samples, val_samples, model, schedule, seed)
        if result.aborted:
            print(f"error: phase 1 aborted: {result.abort_reason}", file=sys.stderr)
            save_checkpoint(ckpt_dir / "phase1_best.ckpt", model, cfg.to_dict(),
                            result.best_epoch, phase=1, params=result.best_params)
            return 1
        save_checkpoint(ckpt_dir / "phase1_best.ckpt", model, cfg.to_dict(),
                        result.best_epoch, phase=1, params=result.best_params)
        save_checkpoint(ckpt_dir / "phase1_last.ckpt", model, cfg.to_dict(),
                        schedule.phase1_epochs - 1, phase=1, rng=result.rng,
                        adam=result.adam)
        _write_history_csv(result.history, report_dir / "phase1_loss.csv")
        figures.save_loss_curve(result.history, report_dir / "phase1_loss.png",
                                title="phase 1")
        print(f"phase 1: best val PSNR {result.best_val_psnr:.2f} dB "
              f"at epoch {result.best_epoch}")

    if 2 in phases:
        if model is None:
            ckpt_path = Path(args.checkpoint) if args.checkpoint else ckpt_dir / "phase1_best.ckpt"
            if not ckpt_path.exists():
                raise CliError(f"missing checkpoint {ckpt_path}")
            data = load_checkpoint(ckpt_path)
            model = _build_model(RunConfig.from_dict(data.config), train_samples)
            apply_params(model, data.params)
        else:
            # phase 2 starts from the best phase-1 parameters
            data = load_checkpoint(ckpt_dir / "phase1_best.ckpt")
            apply_params(model, data.params)
        print(parameter_signature(model, cfg))
        result = train_phase2(train_samples, val_samples, model, schedule, seed)
        if result.aborted:
            print(f"error: phase 2 aborted: {result.abort_reason}", file=sys.stderr)
            return 1
        save_checkpoint(ckpt_dir / "phase2_best.ckpt", model, cfg.to_dict(),
                        result.best_epoch, phase=2, params=result.best_params)
        _write_history_csv(result.history, report_dir / "phase2_loss.csv")
        if result.history:
            figures.save_loss_curve(result.history, report_dir / "phase2_loss.png",
                                    title="phase 2")
        print(f"phase 2: best val PSNR {result.best_val_psnr:.2f} dB "
              f"at epoch {result.best_epoch}")
    return 0


def _model_from_checkpoint(path: Path, train_samples=None):
    if not path.exists():
        raise CliError(f"missing checkpoint {path}")
    data = load_checkpoint(path)
    cfg = RunConfig.from_dict(data.config)
    model = build_pipeline(cfg)
    apply_params(model, data.params)
    return model, cfg, data


def cmd_eval(args) -> int:
    base = _base(args)
    cfg_cli = _load_run_config(args) if args.config else None
    ckpt = Path(args.checkpoint) if args.checkpoint else None
    if ckpt is None:
        paths = cfg_cli.paths if cfg_cli else RunConfig().paths
        ckpt_dir = _resolve(base, paths.checkpoints)
        ckpt = ckpt_dir / "phase2_best.ckpt"
        if not ckpt.exists():
            ckpt = ckpt_dir / "phase1_best.ckpt"
    model, cfg, data = _model_from_checkpoint(ckpt)
    samples = _load_split_samples(cfg_cli or cfg, base, args.split)
    postprocess = {"auto": data.phase >= 2, "on": True, "off": False}[args.post]
    rows = evaluate_model(model, samples, cfg.dims.s, postprocess=postprocess)
    report_dir = _resolve(base, (cfg_cli or cfg).paths.reports)
    csv_path = report_dir / f"metrics_{args.split}.csv"
    summary = write_metrics_csv(rows, csv_path)
    figures.save_metric_bars(rows, report_dir / f"metrics_{args.split}.png",
                             title=f"{args.split} split")
    print(f"wrote {csv_path}")
    print(f"mean: psnr={summary.psnr:.2f} ssim={summary.ssim:.4f} "
          f"sam={summary.sam:.2f} ergas={summary.ergas:.2f}")
    return 0


def cmd_infer(args) -> int:
    base = _base(args)
    model, cfg, data = _model_from_checkpoint(Path(args.checkpoint))
    cube = load_hsc(args.input)
    d = cfg.dims
    expect = (d.H // d.s, d.W // d.s, d.c)
    if cube.data.shape != expect:
        raise CliError(f"input cube shape {cube.data.shape} does not match "
                       f"configured {expect}")
    postprocess = {"auto": data.phase >= 2, "on": True, "off": False}[args.post]
    out = model.reconstruct(cube.data, postprocess=postprocess)
    out_path = Path(args.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_hsc(ImageCube(data=out), out_path)
    print(f"wrote {out_path} shape={out.shape}")

    if args.emit_preview:
        stem = out_path.with_suffix("")
        bands = (d.C - 1, d.C // 2, 0)
        if d.c == 3:
            # render through the band-integration profiles instead
            response = balanced_response(d.c, d.C)
            rgb = np.clip(out.reshape(-1, d.C) @ response.T, 0, 1)
            rgb = rgb.reshape(out.shape[0], out.shape[1], d.c)[:, :, ::-1]
            from PIL import Image

            Image.fromarray((rgb * 255 + 0.5).astype(np.uint8), mode="RGB").save(
                Path(f"{stem}_preview.png"))
        else:
            figures.save_false_color(out, bands, Path(f"{stem}_preview.png"))
        y, x = (int(v) for v in args.probe.split(","))
        if not (0 <= y < out.shape[0] and 0 <= x < out.shape[1]):
            raise CliError(f"probe {y},{x} outside image {out.shape[:2]}")
        spectrum = out[y, x, :]
        with open(f"{stem}_spectrum.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["band", "value"])
            for b, v in enumerate(spectrum):
                writer.writerow([b, f"{v:.6f}"])
        figures.save_spectrum_plot(spectrum, Path(f"{stem}_spectrum.png"),
                                   coord=(y, x))
        print(f"wrote {stem}_preview.png and {stem}_spectrum.csv")
    return 0


def cmd_gradcheck(args) -> int:
    reports = run_checks(only=args.only, seed=args.seed or 0)
    if not reports:
        raise CliError(f"no gradient checks match {args.only!r}")
    failed = []
    for report in reports:
        print(report)
        if not report.passed:
            failed.append(report.name)
    if failed:
        print(f"error: gradcheck failed: {','.join(failed)}", file=sys.stderr)
        return 1
    print(f"all {len(reports)} gradient checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sssr",
        description="spatio-spectral super-resolution: simulate, train, "
                    "evaluate, infer, verify")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="override training.seed")
        p.add_argument("--out", help="base directory for dataset/checkpoints/reports")

    p = sub.add_parser("simulate", help="generate a synthetic degraded dataset")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="run the two-phase trainer")
    common(p)
    p.add_argument("--phase", choices=["1", "2", "both"], default="both")
    p.add_argument("--checkpoint", help="phase-1 checkpoint when running phase 2 alone")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metric report for a dataset split")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint to evaluate")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--post", choices=["auto", "on", "off"], default="auto")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="reconstruct one cube")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("input", help="input .hsc (low-resolution multispectral)")
    p.add_argument("output", help="output .hsc (fused hyperspectral)")
    p.add_argument("--emit-preview", action="store_true")
    p.add_argument("--probe", default="0,0", help="y,x pixel for the spectrum dump")
    p.add_argument("--post", choices=["auto", "on", "off"], default="auto")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference table")
    common(p)
    p.add_argument("--only", help="substring filter on check names")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, FormatError, IngestionError, CheckpointError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
