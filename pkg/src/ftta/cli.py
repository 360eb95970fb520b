"""Command-line interface covering the full experiment lifecycle.

Subcommands: ``synth-data`` (self-contained digit corpus with an optional
frequency-space shift), ``train`` (source training), ``select-styles``
(style bank construction and pair selection), ``adapt`` (test-time
adaptation stream with reports), ``export`` (restyled images and activation
maps), ``config print-default``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .adapt import compute_metrics, predict_labels, run_stream, train_source, write_report
from .classifier import MicroCnn, grad_cam
from .config import ConfigError, RunConfig
from .data import (export_cam, load_idx, load_idx_images, make_digits, save_idx,
                   synth_shift, write_pgm)
from .spectral import stylize
from .style_bank import build_bank, load_bank, save_bank, score_styles, select_pair


class UsageError(Exception):
    """Bad arguments detected after parsing (exit code 2)."""


def _parse_lambdas(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}") from exc


def _add_common_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="path to a JSON run config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--lambdas", type=_parse_lambdas,
                    help="interpolation coefficients, e.g. 0.2,0.4,0.6,0.8")
    sp.add_argument("--beta", type=float, help="low-pass mask radius fraction")
    sp.add_argument("--k", type=int, help="top-k styles eligible for the pair")
    sp.add_argument("--w-global", dest="w_global", type=float)
    sp.add_argument("--w-local", dest="w_local", type=float)
    sp.add_argument("--w-style", dest="w_style", type=float)
    sp.add_argument("--mode", choices=["online", "episodic", "both"])
    sp.add_argument("--full-style-lambda", dest="full_style_lambda", type=float)
    sp.add_argument("--no-update", action="store_true",
                    help="input adaptation only: skip the gradient step")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--train-lr", dest="train_lr", type=float)
    sp.add_argument("--train-batch", dest="train_batch", type=int)
    sp.add_argument("--no-augment", action="store_true")
    sp.add_argument("--bank-size", dest="bank_size", type=int)
    for flag in ("train-images", "train-labels", "val-images", "val-labels",
                 "test-images", "test-labels", "bank-dir", "checkpoint", "output-dir"):
        sp.add_argument(f"--{flag}", dest=flag.replace("-", "_"))


def _effective_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {name: getattr(args, name, None) for name in RunConfig.field_names()}
    if getattr(args, "no_update", False):
        overrides["update"] = False
    if getattr(args, "no_augment", False):
        overrides["augment"] = False
    return cfg.override(**overrides)


def _require(cfg: RunConfig, *names: str) -> None:
    for name in names:
        if getattr(cfg, name) is None:
            flag = "--" + name.replace("_", "-")
            raise UsageError(f"missing required path: set {flag} or config key {name!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ftta",
        description="Fourier test-time adaptation for small image classifiers")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("config", help="configuration utilities")
    sp.add_argument("action", choices=["print-default"])

    sp = sub.add_parser("synth-data", help="generate the synthetic digit corpus")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--n-train", type=int, default=2000)
    sp.add_argument("--n-val", type=int, default=400)
    sp.add_argument("--n-test", type=int, default=1000)
    sp.add_argument("--classes", type=int, default=5)
    sp.add_argument("--size", type=int, default=28)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--gamma", type=float, default=1.6, help="low-band amplitude scale")
    sp.add_argument("--sigma", type=float, default=0.15, help="mid-band phase noise")
    sp.add_argument("--contrast", type=float, default=1.4, help="contrast exponent")

    for name, helptext in (("train", "train the source classifier"),
                           ("select-styles", "build, score and select the style bank"),
                           ("adapt", "run the test-time adaptation stream"),
                           ("export", "export restyled images and activation maps")):
        sp = sub.add_parser(name, help=helptext)
        _add_common_flags(sp)
        if name == "export":
            sp.add_argument("--ids", required=True,
                            help="comma-separated test image indices")
    return parser


def cmd_train(cfg: RunConfig) -> int:
    _require(cfg, "train_images", "train_labels", "val_images", "val_labels", "checkpoint")
    train_set = load_idx(cfg.train_images, cfg.train_labels, split="train")
    val_set = load_idx(cfg.val_images, cfg.val_labels, split="val")
    num_classes = int(max(train_set.labels.max(), val_set.labels.max())) + 1
    model = MicroCnn(num_classes=num_classes, seed=cfg.seed,
                     input_size=train_set.images.shape[1])
    result = train_source(model, train_set, val_set, epochs=cfg.epochs, lr=cfg.train_lr,
                          batch_size=cfg.train_batch, augment=cfg.augment, seed=cfg.seed)
    Path(cfg.checkpoint).parent.mkdir(parents=True, exist_ok=True)
    model.save(cfg.checkpoint)
    metrics_path = Path(f"{cfg.checkpoint}.metrics.json")
    metrics_path.write_text(json.dumps(
        {"best_val_accuracy": result.best_val_accuracy, "epochs": cfg.epochs,
         "history": result.history, "num_classes": num_classes, "seed": cfg.seed},
        sort_keys=True, indent=1))
    print(f"checkpoint written to {cfg.checkpoint} "
          f"(best val accuracy {result.best_val_accuracy})")
    return 0


def cmd_select_styles(cfg: RunConfig) -> int:
    _require(cfg, "checkpoint", "train_images", "train_labels",
             "val_images", "val_labels", "bank_dir")
    model = MicroCnn.load(cfg.checkpoint)
    train_set = load_idx(cfg.train_images, cfg.train_labels, split="train")
    val_set = load_idx(cfg.val_images, cfg.val_labels, split="val")
    n = len(train_set)
    size = min(cfg.bank_size, n)
    picks = np.sort(np.random.default_rng(cfg.seed).choice(n, size=size, replace=False))
    sources = [f"{cfg.train_images}[{int(i)}]" for i in picks]
    bank = build_bank(train_set.images[picks], cfg.beta, sources=sources)
    score_styles(bank, model, val_set.images, val_set.labels)
    pair = select_pair(bank, cfg.k)
    save_bank(bank, cfg.bank_dir)
    print(f"bank of {len(bank.entries)} styles written to {cfg.bank_dir}; "
          f"chosen pair {pair}")
    return 0


def cmd_adapt(cfg: RunConfig) -> int:
    _require(cfg, "checkpoint", "bank_dir", "test_images", "output_dir")
    model = MicroCnn.load(cfg.checkpoint)
    bank = load_bank(cfg.bank_dir)
    if cfg.test_labels is not None:
        test_set = load_idx(cfg.test_images, cfg.test_labels, split="test")
        images, labels = test_set.images, test_set.labels
    else:
        images, labels = load_idx_images(cfg.test_images), None
    if images.shape[0] == 0:
        raise RuntimeError(f"test set {cfg.test_images} is empty")

    baseline_metrics = None
    if labels is not None:
        baseline_metrics = compute_metrics(labels, predict_labels(model, images),
                                           model.num_classes)

    modes = ["online", "episodic"] if cfg.mode == "both" else [cfg.mode]
    source_state = model.snapshot()
    for mode in modes:
        model.load_state(source_state)
        adaptation = cfg.adaptation(mode=mode)
        report = run_stream(model, images, labels, bank, adaptation)
        csv_path, json_path = write_report(report, adaptation, cfg.output_dir,
                                           tag=mode, baseline_metrics=baseline_metrics)
        acc = report.metrics["accuracy"] if report.metrics else None
        print(f"{mode}: {len(report.records)} images adapted, accuracy {acc}; "
              f"reports at {csv_path} and {json_path}")
    return 0


def cmd_export(cfg: RunConfig, ids_text: str) -> int:
    _require(cfg, "checkpoint", "bank_dir", "test_images", "output_dir")
    model = MicroCnn.load(cfg.checkpoint)
    bank = load_bank(cfg.bank_dir)
    images = load_idx_images(cfg.test_images)
    try:
        ids = [int(part) for part in ids_text.split(",")]
    except ValueError:
        raise UsageError(f"--ids must be comma-separated integers, got {ids_text!r}")
    for image_id in ids:
        if not 0 <= image_id < images.shape[0]:
            raise UsageError(
                f"unknown image id {image_id}; available ids are 0..{images.shape[0] - 1}")

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    style_a, style_b = bank.pair_amplitudes()
    written = []
    sweep = [0.0, *cfg.lambdas, 1.0]
    for image_id in ids:
        image = images[image_id]
        base = out_dir / f"img{image_id:04d}.pgm"
        write_pgm(base, image)
        written.append(base)
        for sid, style in zip(bank.chosen_pair, (style_a, style_b)):
            for lam in sweep:
                path = out_dir / f"img{image_id:04d}_style{sid:04d}_lam{lam:.2f}.pgm"
                write_pgm(path, stylize(image, style, lam, cfg.beta))
                written.append(path)
        pred = int(np.argmax(model.predict(image[None])))
        cam = grad_cam(model, image, pred)
        written += export_cam(cam, image, out_dir / f"img{image_id:04d}_cam.pgm")
    print(f"wrote {len(written)} files to {out_dir}")
    return 0


def cmd_synth_data(args: argparse.Namespace) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pieces = {
        "train": make_digits(args.n_train, args.classes, args.size, args.seed, split="train"),
        "val": make_digits(args.n_val, args.classes, args.size, args.seed + 1, split="val"),
        "test-clean": make_digits(args.n_test, args.classes, args.size, args.seed + 2,
                                  split="test"),
    }
    pieces["test-shifted"] = synth_shift(
        pieces["test-clean"], amplitude_scale=args.gamma, phase_noise=args.sigma,
        contrast=args.contrast, seed=args.seed + 3)
    for name, dataset in pieces.items():
        save_idx(out / f"{name}-images.idx", out / f"{name}-labels.idx", dataset)
        print(f"{name}: {len(dataset)} images -> {out / f'{name}-images.idx'}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "config":
            print(RunConfig().to_json())
            return 0
        if args.command == "synth-data":
            return cmd_synth_data(args)
        cfg = _effective_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "select-styles":
            return cmd_select_styles(cfg)
        if args.command == "adapt":
            return cmd_adapt(cfg)
        if args.command == "export":
            return cmd_export(cfg, args.ids)
        raise UsageError(f"unknown command {args.command!r}")
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
