"""Command-line front end: dataset generation, training, evaluation, and
run comparison. Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical abort."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import MODES, ModelConfig, RunConfig, TrainConfig, normalize_mode
from .errors import ConfigurationError, DataError, InputError, NumericalError, StateError
from .evaluation import compute_metrics, export_ribbon, online_predict
from .synthdata import load_manifest, load_split, make_benchmark, make_workflow
from .trainer import Trainer, load_inference_model

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="semiphase", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", parents=[], help="generate a synthetic benchmark tree")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--labeled-fraction", type=float, default=0.1)
    gen.add_argument("--videos", type=int, default=24, help="training videos")
    gen.add_argument("--val", type=int, default=6)
    gen.add_argument("--test", type=int, default=10)
    gen.add_argument("--phases", type=int, default=5)
    gen.add_argument("--noise", type=float, default=0.08)
    gen.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")
    gen.set_defaults(func=cmd_gen_data)

    train = sub.add_parser("train", help="run the training schedule")
    train.add_argument("--data", required=True, help="dataset directory")
    train.add_argument("--out", required=True, help="run directory")
    train.add_argument("--mode", default=None, help="SUP | TCR | CLP | TCN or full form")
    train.add_argument("--config", default=None, help="JSON file with run configuration")
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--resume", action="store_true")
    for flag, kind in [
        ("--warmup-epochs", int), ("--semi-epochs", int), ("--batch-size", int),
        ("--base-lr", float), ("--momentum", float), ("--weight-decay", float),
        ("--delta", float), ("--alpha", float), ("--eta", float), ("--margin", float),
        ("--k-neg", int), ("--labeled-stride", int), ("--unlabeled-stride", int),
    ]:
        train.add_argument(flag, type=kind, default=None)
    for flag in ["--window-len", "--embed-dim", "--depth", "--heads", "--patch-size"]:
        train.add_argument(flag, type=int, default=None)
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="test")
    ev.add_argument("--out", default=None, help="metrics JSON path (default: run dir)")
    ev.add_argument("--model", default="teacher", choices=["teacher", "student"])
    ev.add_argument("--ribbons", default=None, help="directory for per-video ribbon CSVs")
    ev.add_argument("--ribbon-images", action="store_true")
    ev.set_defaults(func=cmd_eval)

    cmp_ = sub.add_parser("compare", help="tabulate metrics across runs")
    cmp_.add_argument("--runs", nargs="+", required=True)
    cmp_.add_argument("--split", default="test")
    cmp_.add_argument("--csv", default=None, help="also write the CSV here")
    cmp_.set_defaults(func=cmd_compare)
    return parser


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        print(f"error: {out} exists and is not empty (use --force)", file=sys.stderr)
        return EXIT_USAGE
    workflow = make_workflow(args.phases, noise_sigma=args.noise)
    manifest = make_benchmark(
        out,
        seed=args.seed,
        num_train=args.videos,
        num_val=args.val,
        num_test=args.test,
        labeled_fraction=args.labeled_fraction,
        workflow=workflow,
    )
    splits = manifest["splits"]
    print(f"dataset written to {out}")
    for name in ("train_labeled", "train_unlabeled", "val", "test"):
        print(f"  {name}: {len(splits[name])} videos")
    print(f"  phases: {manifest['num_phases']}, seed: {manifest['seed']}")
    return EXIT_OK


def _resolve_train_config(args) -> RunConfig:
    manifest = load_manifest(args.data)
    model_d = ModelConfig(
        num_classes=manifest["num_phases"],
        frame_size=manifest["frame_size"],
        channels=manifest["channels"],
    ).to_dict()
    train_d = TrainConfig().to_dict()
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        model_d.update(file_cfg.get("model", {}))
        train_d.update(file_cfg.get("train", {}))
    flag_to_model = {
        "window_len": "window_len", "embed_dim": "embed_dim", "depth": "depth",
        "heads": "heads", "patch_size": "patch_size",
    }
    for flag, key in flag_to_model.items():
        value = getattr(args, flag)
        if value is not None:
            model_d[key] = value
    for key in [
        "warmup_epochs", "semi_epochs", "batch_size", "base_lr", "momentum",
        "weight_decay", "delta", "alpha", "eta", "margin", "k_neg",
        "labeled_stride", "unlabeled_stride", "seed",
    ]:
        value = getattr(args, key)
        if value is not None:
            train_d[key] = value
    if args.mode is not None:
        train_d["mode"] = normalize_mode(args.mode)
    return RunConfig(
        model=ModelConfig.from_dict(model_d),
        train=TrainConfig.from_dict(train_d),
        dataset_dir=str(args.data),
        out_dir=str(args.out),
    )


def cmd_train(args) -> int:
    run = _resolve_train_config(args)
    trainer = Trainer(run)
    state = trainer.execute(resume=args.resume)
    final = Path(run.out_dir) / "final" / "teacher.ckpt"
    print(f"run complete: mode={run.train.mode} seed={run.train.seed} epochs={state.epoch}")
    print(f"final teacher checkpoint: {final}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, refiner, stats = load_inference_model(args.checkpoint, which=args.model)
    videos = load_split(args.data, args.split)
    tracks = [online_predict(model, v, stats, refiner=refiner) for v in videos]
    report = compute_metrics(
        tracks, [v.labels for v in videos], num_classes=model.config.num_classes
    )
    out = Path(args.out) if args.out else Path(args.checkpoint).parent.parent / f"eval_{args.split}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    if args.ribbons:
        ribbon_dir = Path(args.ribbons)
        for video, track in zip(videos, tracks):
            image = ribbon_dir / f"{video.video_id}.png" if args.ribbon_images else None
            export_ribbon(track, video.labels, ribbon_dir / f"{video.video_id}.csv", image)
    agg = report.aggregate
    print(f"split={args.split} videos={len(videos)} model={args.model}")
    for name in ("accuracy", "precision", "recall", "jaccard", "f1"):
        m = agg[name]
        print(f"  {name:>9}: {100 * m['mean']:6.2f} +/- {100 * m['std']:5.2f}")
    print(f"metrics written to {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    rows = []
    for run_dir in args.runs:
        run_dir = Path(run_dir)
        cfg_path = run_dir / "config.json"
        eval_path = run_dir / f"eval_{args.split}.json"
        if not cfg_path.exists():
            raise DataError(f"missing {cfg_path}")
        if not eval_path.exists():
            raise DataError(f"missing {eval_path}; run `semiphase eval` on this run first")
        cfg = json.loads(cfg_path.read_text())
        agg = json.loads(eval_path.read_text())["aggregate"]
        rows.append(
            {
                "mode": cfg["train"]["mode"],
                "seed": cfg["train"]["seed"],
                **{
                    f"{name}_{stat}": agg[name][stat]
                    for name in ("accuracy", "precision", "recall", "jaccard")
                    for stat in ("mean", "std")
                },
            }
        )
    rows.sort(key=lambda r: (MODES.index(r["mode"]), r["seed"]))

    header = ["mode", "seed", "accuracy", "precision", "recall", "jaccard"]
    widths = [max(len(h), 16) for h in header]
    widths[1] = max(len("seed"), 4)
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for r in rows:
        cells = [r["mode"].ljust(widths[0]), str(r["seed"]).ljust(widths[1])]
        for name in ("accuracy", "precision", "recall", "jaccard"):
            cells.append(
                f"{100 * r[f'{name}_mean']:.2f} +/- {100 * r[f'{name}_std']:.2f}".ljust(16)
            )
        lines.append("  ".join(cells))
    table = "\n".join(lines)
    print(table)

    csv_lines = ["mode,seed," + ",".join(
        f"{n}_{s}" for n in ("accuracy", "precision", "recall", "jaccard") for s in ("mean", "std")
    )]
    for r in rows:
        csv_lines.append(
            f"{r['mode']},{r['seed']},"
            + ",".join(
                f"{r[f'{n}_{s}']:.6f}"
                for n in ("accuracy", "precision", "recall", "jaccard")
                for s in ("mean", "std")
            )
        )
    csv_text = "\n".join(csv_lines) + "\n"
    if args.csv:
        Path(args.csv).write_text(csv_text)
        print(f"csv written to {args.csv}")
    else:
        print(csv_text, end="")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigurationError, InputError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
