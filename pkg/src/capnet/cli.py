"""Command line entry points.

Subcommands: train, eval, verify, dump, make-dataset. Configuration comes
from an optional flat config file plus repeatable --set key=value
overrides; a handful of common settings also have first-class flags. The
fully resolved configuration is echoed to <out>/config.resolved. The
output directory is --out / out.dir, falling back to $CAP_OUT.

Exit codes: 0 success, 1 verification failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import ctf
from .config import (build_run_config, load_run_config, merge, parse_config_text,
                     parse_override, resolved_text)
from .data import LabeledDataset, center_crop, load_png, make_synthetic_dataset
from .errors import CapnetError, ConfigError
from .model import MODES, load_checkpoint
from .regions import enumerate_regions, write_regions_csv
from .training import assemble_model, evaluate, train
from .verify import run_suites


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capnet",
        description="Train and inspect context-aware attentional pooling models.",
        epilog="Exit codes: 0 ok, 1 verification failure, 2 usage/config error. "
               "$CAP_OUT supplies the default output directory.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write metrics + checkpoints")
    p_train.add_argument("--config", help="flat key = value config file")
    p_train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="override one config key (repeatable)")
    p_train.add_argument("--mode", choices=MODES)
    p_train.add_argument("--data", help="dataset root, or 'synthetic'")
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-size", type=int)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--out", help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint, print a JSON report")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", help="dataset root override")
    p_eval.add_argument("--split", choices=("train", "test"), default="test")
    p_eval.add_argument("--out", help="also write the report to this file")
    p_eval.set_defaults(func=cmd_eval)

    p_verify = sub.add_parser("verify", help="run built-in self checks")
    p_verify.add_argument("suite", nargs="?", default="all",
                          choices=("gradcheck", "oracles", "invariants", "all"))
    p_verify.add_argument("--instances", type=int, default=20,
                          help="random draws per gradient case")
    p_verify.set_defaults(func=cmd_verify)

    p_dump = sub.add_parser("dump", help="export regions, attention maps, or features")
    p_dump.add_argument("what", choices=("regions", "attn", "features"))
    p_dump.add_argument("--checkpoint", required=True)
    p_dump.add_argument("--input", nargs="*", default=[], metavar="IMAGE",
                        help="png images to run (attn/features)")
    p_dump.add_argument("--out", help="output directory")
    p_dump.set_defaults(func=cmd_dump)

    p_make = sub.add_parser("make-dataset", help="write the synthetic benchmark as a png tree")
    p_make.add_argument("--out", required=True)
    p_make.add_argument("--classes", type=int, default=8)
    p_make.add_argument("--per-class-train", type=int, default=200)
    p_make.add_argument("--per-class-test", type=int, default=50)
    p_make.add_argument("--image-size", type=int, default=72)
    p_make.add_argument("--subtlety", type=float, default=0.3)
    p_make.add_argument("--seed", type=int, default=0)
    p_make.set_defaults(func=cmd_make_dataset)
    return parser


def _flag_overrides(args) -> list:
    pairs = []
    for flag, key in (("mode", "train.mode"), ("data", "data.root"),
                      ("epochs", "train.epochs"), ("batch_size", "train.batch_size"),
                      ("seed", "train.seed"), ("out", "out.dir")):
        value = getattr(args, flag, None)
        if value is not None:
            pairs.append((key, value))
    return pairs


def _resolve_out_dir(configured: str) -> Path:
    out = configured or os.environ.get("CAP_OUT", "")
    if not out:
        raise ConfigError(
            "no output directory: pass --out, set out.dir, or export CAP_OUT")
    return Path(out)


def _dataset_pair(run):
    flat = run.flat
    if run.synthetic:
        make = lambda split, count: make_synthetic_dataset(
            flat["data.num_classes"], count, flat["data.image_size"],
            flat["data.subtlety"], run.data_seed, split)
        return (make("train", flat["data.per_class_train"]),
                make("test", flat["data.per_class_test"]))
    train_ds = LabeledDataset.from_directory(run.data_root, "train")
    test_ds = LabeledDataset.from_directory(run.data_root, "test")
    if len(train_ds.class_names) != run.train.num_classes:
        raise ConfigError(
            f"dataset has {len(train_ds.class_names)} classes, config says "
            f"{run.train.num_classes} (set data.num_classes)")
    return train_ds, test_ds


def cmd_train(args) -> int:
    overrides = [parse_override(s) for s in args.set] + _flag_overrides(args)
    run = load_run_config(args.config, overrides)
    out = _resolve_out_dir(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(resolved_text(run.flat))
    train_ds, test_ds = _dataset_pair(run)
    print(f"training mode {run.train.mode} on {len(train_ds)} samples "
          f"({len(test_ds)} test), out -> {out}")
    result = train(run.train, train_ds, test_ds, out_dir=out,
                   checkpoint_every=run.checkpoint_every, log=print)
    for ckpt in sorted(out.glob("checkpoint-*")):
        (ckpt / "config.resolved").write_text(resolved_text(run.flat))
    if result.history:
        last = result.history[-1]
        print(f"done in {result.elapsed:.1f}s: "
              f"test top-1 {last['test_top1']:.4f}, metrics -> {out / 'metrics.csv'}")
    else:
        print(f"done in {result.elapsed:.1f}s (no epochs requested)")
    return 0


def _load_checkpointed_model(checkpoint: str, data_override=None):
    ckpt = Path(checkpoint)
    resolved = ckpt / "config.resolved"
    if not resolved.is_file():
        raise ConfigError(f"checkpoint {ckpt} has no config.resolved")
    flat = parse_config_text(resolved.read_text(), origin=str(resolved))
    overrides = [("data.root", data_override)] if data_override else []
    run = build_run_config(merge(flat, overrides))
    model = assemble_model(run.train)
    load_checkpoint(ckpt, model)
    return run, model


def cmd_eval(args) -> int:
    run, model = _load_checkpointed_model(args.checkpoint, args.data)
    train_ds, test_ds = _dataset_pair(run)
    dataset = train_ds if args.split == "train" else test_ds
    result = evaluate(model, dataset, (1, 2, 5), crop_to=run.train.augment.crop_to)
    report = {
        "split": args.split,
        "n_items": result.n_items,
        "top_n": {str(n): v for n, v in result.top_n.items()},
        "per_class": result.per_class,
        "class_names": dataset.class_names,
    }
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def cmd_verify(args) -> int:
    results = run_suites(args.suite, instances=args.instances)
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failed += not r.passed
        print(f"[{status}] {r.name:<{width}}  {r.detail}")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def _prepared_image(path: str, crop_to: int) -> np.ndarray:
    return center_crop(load_png(path), crop_to)


def cmd_dump(args) -> int:
    run, model = _load_checkpointed_model(args.checkpoint)
    out = _resolve_out_dir(args.out or run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = run.train
    if args.what == "regions":
        map_h, map_w = cfg.backbone.upsample_to
        regions = enumerate_regions(map_w, map_h, cfg.regions)
        path = out / "regions.csv"
        write_regions_csv(regions, path)
        print(f"{len(regions)} regions -> {path}")
        return 0
    if not args.input:
        raise ConfigError(f"dump {args.what} needs at least one --input image")
    if args.what == "attn" and cfg.mode not in ("B+C", "B+C+E"):
        raise ConfigError(f"mode {cfg.mode} computes no attention maps")
    for image_path in args.input:
        stem = Path(image_path).stem
        img = _prepared_image(image_path, cfg.augment.crop_to)
        _, info = model.forward(img, internals=True)
        if args.what == "attn":
            ctf.save_tensor(out / f"{stem}.alpha.ctf", info["alpha"].data)
            ctf.save_tensor(out / f"{stem}.pixel_attn.ctf", info["pixel_attn"].data)
            print(f"{image_path}: alpha {info['alpha'].shape} "
                  f"pixel {info['pixel_attn'].shape} -> {out}")
        else:
            if "hidden" in info:
                payload = info["descriptor"].data           # (hidden, K)
            elif "features" in info:
                payload = np.stack([f.data for f in info["features"]])
            else:
                payload = info["descriptor"].data           # pooled channels
            ctf.save_tensor(out / f"{stem}.features.ctf", payload)
            print(f"{image_path}: features {payload.shape} -> {out}")
    return 0


def cmd_make_dataset(args) -> int:
    root = Path(args.out)
    for split, count in (("train", args.per_class_train), ("test", args.per_class_test)):
        ds = make_synthetic_dataset(args.classes, count, args.image_size,
                                    args.subtlety, args.seed, split)
        ds.write_png_tree(root)
        print(f"{split}: {len(ds)} images under {root / split}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except CapnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
