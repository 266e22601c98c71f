"""Command-line entry point: ``aled {gen,train,eval,infer,plot}``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .evaluation import DEFAULT_CUTOFFS, SequenceEvaluator, format_table
from .figures import change_overlay, depth_image, event_image, save_image
from .io import DatasetError, list_sequences, read_sequence
from .representations import project_lidar
from .synthetic import SceneSpec, generate_sequence
from .trainer import (
    CheckpointError,
    ConfigError,
    NumericalError,
    TrainConfig,
    Trainer,
    model_from_checkpoint,
    predict_sequence,
    read_checkpoint,
)
from .types import DepthPair

log = logging.getLogger("aled")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _data_dir(arg):
    path = arg or os.environ.get("ALED_DATA_ROOT")
    if not path:
        raise UsageError("no data directory given and ALED_DATA_ROOT is unset")
    return Path(path)


def _seed_everything(seed):
    torch.manual_seed(seed)
    np.random.seed(seed)


def dir_checksum(path) -> str:
    """SHA-256 over relative paths and contents of every file under ``path``."""
    h = hashlib.sha256()
    root = Path(path)
    for f in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(root)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


# ------------------------------------------------------------------ gen

def cmd_gen(args):
    if args.spec == "random":
        scene = SceneSpec.random(args.seed if args.seed is not None else 0)
    else:
        try:
            scene = SceneSpec.from_json(Path(args.spec).read_text())
        except FileNotFoundError as exc:
            raise UsageError(f"scene spec {args.spec} not found") from exc
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise UsageError(f"bad scene spec {args.spec}: {exc}") from exc
        if args.seed is not None:
            scene.seed = args.seed
    try:
        scene.validate()
    except ValueError as exc:
        raise UsageError(f"bad scene spec: {exc}") from exc
    out = Path(args.out_dir)
    if not out.parent.exists():
        raise DatasetError(out.parent, "parent of the output directory does not exist")
    records = generate_sequence(scene, out, bins=args.bins)
    n_events = sum(len(r.window) for r in records)
    n_scans = sum(r.lidar is not None for r in records)
    print(f"records\t{len(records)}\nevents\t{n_events}\nscans\t{n_scans}\nsha256\t{dir_checksum(out)}")
    return EXIT_OK


# ------------------------------------------------------------------ train

_OVERRIDES = {
    "lr": "learning_rate", "epochs": "epochs", "batch_size": "batch_size", "crop": "crop",
    "hflip_prob": "hflip_prob", "tbptt_len": "tbptt_len", "base_channels": "base_channels",
    "seed": "seed",
}


def _load_dataset(data_dir):
    seqs = list_sequences(data_dir)
    if not seqs:
        raise DatasetError(data_dir, "no sequence directories (meta.json) found")
    dataset = []
    for seq in seqs:
        records, camera, _ = read_sequence(seq)
        dataset.append((records, camera))
    return dataset


def cmd_train(args):
    overrides = {key: getattr(args, flag) for flag, key in _OVERRIDES.items()
                 if getattr(args, flag) is not None}
    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text()
        except FileNotFoundError as exc:
            raise UsageError(f"config {args.config} not found") from exc
    config = TrainConfig.from_text(text, overrides)
    _seed_everything(config.seed)
    dataset = _load_dataset(_data_dir(args.data_dir))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.to_text())
    with open(out / "train_log.tsv", "w") as log_file:
        log_file.write("epoch\tstep\tl_pw\tl_msg\ttotal\n")
        trainer = Trainer(config, log_file=log_file)

        def save(tr, rep):
            tr.save_checkpoint(out / f"checkpoint_epoch_{rep.epoch:04d}.pt")
            print(f"epoch {rep.epoch}\tloss {rep.mean_loss:.6g}\tsteps {rep.steps}\t{rep.seconds:.1f}s")

        trainer.fit(dataset, callback=save)
    return EXIT_OK


# ------------------------------------------------------------------ eval

def _load_model(path):
    ckpt = read_checkpoint(path)
    return model_from_checkpoint(ckpt)


def _sparse_images(records, camera):
    """Most recent projected scan for every record (``None`` before the first)."""
    current = None
    out = []
    for rec in records:
        if rec.lidar is not None:
            current = project_lidar(rec.lidar, camera)
        out.append(current)
    return out


def _parse_cutoffs(text):
    try:
        return tuple(float(c) for c in text.split(",") if c.strip())
    except ValueError as exc:
        raise UsageError(f"bad --cutoffs {text!r}") from exc


def cmd_eval(args):
    cutoffs = _parse_cutoffs(args.cutoffs) if args.cutoffs else DEFAULT_CUTOFFS
    model = None
    if not (args.nn_only or args.oracle):
        if not args.checkpoint:
            raise UsageError("a checkpoint is required unless --nn-only or --oracle is given")
        model = _load_model(args.checkpoint)
    seqs = list_sequences(_data_dir(args.data_dir))
    if not seqs:
        raise DatasetError(args.data_dir, "no sequence directories found")
    total = SequenceEvaluator(cutoffs, args.tau)
    for seq in seqs:
        records, camera, meta = read_sequence(seq)
        if model is not None and model.cfg.bins != meta["bins"]:
            raise CheckpointError(
                f"checkpoint expects {model.cfg.bins} bins but {seq} was built with {meta['bins']}"
            )
        if args.oracle:
            preds = [DepthPair(r.gt_begin.data, r.gt_end.data) for r in records]
        elif model is not None:
            preds = predict_sequence(model, records, camera)
        else:
            preds = [None] * len(records)
        ev = SequenceEvaluator(cutoffs, args.tau)
        for rec, sparse, pred in zip(records, _sparse_images(records, camera), preds):
            ev.add(rec, sparse, pred)
            total.add(rec, sparse, pred)
        print(f"# sequence {seq.name}")
        sys.stdout.write(format_table(ev.table()))
    print("# all")
    sys.stdout.write(format_table(total.table()))
    return EXIT_OK


# ------------------------------------------------------------------ infer / plot

def _parse_range(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise UsageError(f"bad --range {text!r}, expected lo:hi") from exc
    if hi <= lo:
        raise UsageError("--range upper bound must exceed the lower bound")
    return lo, hi


def cmd_infer(args):
    model = _load_model(args.checkpoint)
    records, camera, _ = read_sequence(args.sequence_dir)
    preds = predict_sequence(model, records, camera)
    out = Path(args.out_dir)
    (out / "pred").mkdir(parents=True, exist_ok=True)
    for i, p in enumerate(preds):
        (out / "pred" / f"{i}_bf.bin").write_bytes(np.ascontiguousarray(p.d_bf, dtype="<f4").tobytes())
        (out / "pred" / f"{i}_af.bin").write_bytes(np.ascontiguousarray(p.d_af, dtype="<f4").tobytes())
    info = {"sequence_dir": str(Path(args.sequence_dir).resolve()), "steps": len(preds),
            "height": camera.height, "width": camera.width}
    (out / "infer.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(preds)} prediction pairs to {out / 'pred'}")
    if not args.no_plot:
        args.out_dir = str(out)
        return cmd_plot(args)
    return EXIT_OK


def cmd_plot(args):
    out = Path(args.out_dir)
    try:
        info = json.loads((out / "infer.json").read_text())
    except FileNotFoundError as exc:
        raise DatasetError(out / "infer.json", "missing; run `aled infer` first") from exc
    lo, hi = _parse_range(args.range)
    records, camera, _ = read_sequence(info["sequence_dir"])
    h, w = info["height"], info["width"]
    figs = out / "figures"
    figs.mkdir(exist_ok=True)
    sparse = _sparse_images(records, camera)
    for i, rec in enumerate(records[:info["steps"]]):
        def load(tag):
            path = out / "pred" / f"{i}_{tag}.bin"
            try:
                return np.frombuffer(path.read_bytes(), dtype="<f4").reshape(h, w)
            except (FileNotFoundError, ValueError) as exc:
                raise DatasetError(path, "missing or malformed prediction") from exc
        pred = DepthPair(load("bf"), load("af"))
        save_image(figs / f"{i:04d}_events.png", event_image(rec.window, h, w))
        lidar = sparse[i].data if sparse[i] is not None else np.zeros((h, w))
        lidar_rgb = depth_image(lidar, lo, hi)
        lidar_rgb[lidar == 0] = 255
        save_image(figs / f"{i:04d}_lidar.png", lidar_rgb)
        save_image(figs / f"{i:04d}_pred_bf.png", depth_image(pred.d_bf, lo, hi))
        save_image(figs / f"{i:04d}_pred_af.png", depth_image(pred.d_af, lo, hi))
        save_image(figs / f"{i:04d}_gt_begin.png", depth_image(rec.gt_begin.data, lo, hi))
        save_image(figs / f"{i:04d}_gt_end.png", depth_image(rec.gt_end.data, lo, hi))
        save_image(figs / f"{i:04d}_change.png", change_overlay(pred, rec.window, args.tau))
    print(f"wrote figures for {info['steps']} steps to {figs}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aled", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic sequence")
    p.add_argument("spec", help="scene spec JSON, or 'random'")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--bins", type=int, default=5)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the network")
    p.add_argument("data_dir", nargs="?")
    p.add_argument("out_dir")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--crop", type=int)
    p.add_argument("--hflip-prob", type=float)
    p.add_argument("--tbptt-len", type=int)
    p.add_argument("--base-channels", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metric tables (network and nearest-neighbor baseline)")
    p.add_argument("checkpoint", nargs="?")
    p.add_argument("--data-dir")
    p.add_argument("--cutoffs")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--nn-only", action="store_true")
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict depth pairs for one sequence")
    p.add_argument("checkpoint")
    p.add_argument("sequence_dir")
    p.add_argument("out_dir")
    p.add_argument("--range", default="0:200")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--no-plot", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("plot", help="figures from an infer output directory")
    p.add_argument("out_dir")
    p.add_argument("--range", default="0:200")
    p.add_argument("--tau", type=float, default=1.0)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is not None:
        _seed_everything(args.seed)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
