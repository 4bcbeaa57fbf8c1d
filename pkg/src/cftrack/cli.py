"""Command-line pipeline driver.

Subcommands:
  pretrain       train the base auto-encoder from a directory of FMAP files
  train-experts  cluster compressed maps, train expert models and selector
  track          run the tracker over a sequence, writing per-frame CSV
  eval           score result CSVs against sequence ground truth

Exit codes: 0 success, 2 pretrain/input errors, 3 not enough distinct
samples to cluster, 4 sequence errors while tracking, 5 missing or
mismatched results during evaluation.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import autoencoder as ae
from . import bench, context
from .config import PipelineConfig, apply_overrides, load_config
from .errors import FormatError, InsufficientDistinct, MissingFrames
from .features import (
    BoundingBox,
    BuiltinFeatureConfig,
    BuiltinFeatureSource,
    FmapDirectorySource,
    load_fmap,
)
from .tracker import Tracker, TrackerModels

RESULT_FIELDS = ["frame", "x", "y", "w", "h", "rmax", "occluded"]


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    return cfg


def _feature_dir_maps(directory):
    paths = sorted(Path(directory).glob("*.fmap"))
    return paths, [load_fmap(p) for p in paths]


def _train_cfg(cfg: PipelineConfig, lr: float, epochs: int, seed_offset: int):
    return ae.TrainConfig(
        learning_rate=lr,
        epochs=epochs,
        batch_size=cfg.batch_size,
        corrupt_fraction=cfg.corrupt_fraction,
        exchange_fraction=cfg.exchange_fraction,
        seed=cfg.seed + seed_offset,
        depth=cfg.depth,
    )


def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    try:
        _paths, maps = _feature_dir_maps(args.feature_dir)
        if not maps:
            print("no samples", file=sys.stderr)
            return 2
        history: list = []
        model = ae.pretrain_base(
            maps, _train_cfg(cfg, cfg.base_lr, cfg.base_epochs, 0), history=history
        )
        ae.save_model(model, args.out_model)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"pretrain failed: {exc}", file=sys.stderr)
        return 2
    for epoch, loss in enumerate(history, start=1):
        print(f"epoch {epoch}: loss {loss:.6g}")
    print(f"wrote {args.out_model}")
    return 0


def cmd_train_experts(args) -> int:
    cfg = _load_cfg(args)
    try:
        paths, maps = _feature_dir_maps(args.feature_dir)
        if not maps:
            print("no samples", file=sys.stderr)
            return 2
        base = ae.load_model(args.base_model)
        descriptors = np.stack(
            [context.make_descriptor(ae.compress(base, m)) for m in maps]
        )
        rng = np.random.default_rng(cfg.seed + 1)
        clusters = context.two_step_cluster(
            descriptors, cfg.n_experts, rng=rng, trials=cfg.init_trials
        )
    except InsufficientDistinct as exc:
        print(f"clustering failed: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001
        print(f"train-experts failed: {exc}", file=sys.stderr)
        return 2

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for d in range(1, cfg.n_experts + 1):
        members = [m for m, a in zip(maps, clusters.assignments) if a == d]
        expert = ae.train_expert(
            base, members, _train_cfg(cfg, cfg.expert_lr, cfg.expert_epochs, 100 + d)
        )
        ae.save_model(expert, out_dir / f"expert_{d:02d}.aemd")
    ae.save_model(base, out_dir / "base.aemd")

    sel_cfg = context.SelectorTrainConfig(
        learning_rate=cfg.selector_lr,
        epochs=cfg.selector_epochs,
        batch_size=cfg.selector_batch,
        hidden=cfg.selector_hidden,
        seed=cfg.seed + 2,
        n_classes=cfg.n_experts,
    )
    net = context.train_selector(descriptors, clusters.assignments, sel_cfg)
    context.save_context(clusters, net, out_dir / "context.ctxm")

    with open(out_dir / "assignments.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "cluster"])
        for path, a in zip(paths, clusters.assignments):
            writer.writerow([path.stem, int(a)])

    preds = np.array(
        [context.select(net, d)[0] for d in descriptors], dtype=np.intp
    )
    acc = float((preds == clusters.assignments).mean())
    print(f"selector training accuracy: {acc:.3f}")
    print(f"wrote {cfg.n_experts} experts + context model to {out_dir}")
    return 0


def _make_source(spec: str, cfg: PipelineConfig):
    if spec == "builtin":
        return BuiltinFeatureSource(
            BuiltinFeatureConfig(
                input_size=cfg.input_size,
                cell_size=cfg.cell_size,
                channels=cfg.feature_channels,
                seed=cfg.seed,
            )
        )
    if spec.startswith("fmap:"):
        return FmapDirectorySource(spec[len("fmap:") :])
    raise FormatError(f"unknown feature source {spec!r}")


def _load_models(models_dir) -> TrackerModels:
    mdir = Path(models_dir)
    base = ae.load_model(mdir / "base.aemd")
    _cents, net = context.load_context(mdir / "context.ctxm")
    experts = [
        ae.load_model(p) for p in sorted(mdir.glob("expert_*.aemd"))
    ]
    if not experts:
        raise FormatError(f"{mdir}: no expert checkpoints")
    return TrackerModels(base=base, experts=experts, selector=net)


def cmd_track(args) -> int:
    cfg = _load_cfg(args)
    try:
        seq = bench.load_sequence(args.sequence_dir)
        models = _load_models(args.models_dir)
        source = _make_source(args.features, cfg)
    except Exception as exc:  # noqa: BLE001
        print(f"track setup failed: {exc}", file=sys.stderr)
        return 4

    import cv2

    def read_frame(path):
        img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if img is None:
            raise FormatError(f"unreadable frame {path}")
        if img.ndim == 2:
            img = img[:, :, None]
        return img

    try:
        tracker = Tracker(models, source, cfg)
        rows = []
        first = seq.boxes[0]
        source.set_frame(seq.frame_paths[0].stem)
        state = tracker.init(
            read_frame(seq.frame_paths[0]), BoundingBox(*first)
        )
        rows.append((1, *first, state.rmax_avg, 0))
        t0 = time.perf_counter()
        for i, path in enumerate(seq.frame_paths[1:], start=2):
            source.set_frame(path.stem)
            result = tracker.step(read_frame(path))
            b = result.box
            rows.append((i, b.x, b.y, b.w, b.h, result.r_max, int(result.occluded)))
        elapsed = time.perf_counter() - t0
    except Exception as exc:  # noqa: BLE001
        print(f"tracking failed: {exc}", file=sys.stderr)
        return 4

    with open(args.out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_FIELDS)
        for row in rows:
            writer.writerow(
                [row[0]]
                + [f"{v:.3f}" for v in row[1:5]]
                + [f"{row[5]:.6g}", row[6]]
            )
    n_stepped = len(seq.frame_paths) - 1
    fps = n_stepped / elapsed if elapsed > 0 else float("inf")
    print(f"tracked {len(rows)} frames, mean fps {fps:.1f}")
    return 0


def read_results_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = [
            (float(r["x"]), float(r["y"]), float(r["w"]), float(r["h"]))
            for r in reader
        ]
    return np.asarray(rows, dtype=np.float64)


def cmd_eval(args) -> int:
    results_dir = Path(args.results_dir)
    sequences_dir = Path(args.sequences_dir)
    seq_dirs = sorted(p for p in sequences_dir.iterdir() if p.is_dir())
    if not seq_dirs:
        print(f"no sequences under {sequences_dir}", file=sys.stderr)
        return 5
    per_seq = {}
    try:
        for sdir in seq_dirs:
            seq = bench.load_sequence(sdir)
            csv_path = results_dir / f"{seq.name}.csv"
            if not csv_path.exists():
                print(f"missing results for {seq.name}: {csv_path}", file=sys.stderr)
                return 5
            pred = read_results_csv(csv_path)
            if pred.shape != seq.boxes.shape:
                print(
                    f"{seq.name}: {len(pred)} result rows vs {len(seq.boxes)} frames",
                    file=sys.stderr,
                )
                return 5
            per_seq[seq.name] = bench.evaluate(pred, seq.boxes)
    except (FormatError, MissingFrames) as exc:
        print(f"eval failed: {exc}", file=sys.stderr)
        return 5

    names = sorted(per_seq)
    mean_precision = np.mean([per_seq[n].precision for n in names], axis=0)
    mean_success = np.mean([per_seq[n].success for n in names], axis=0)
    payload = {
        "sequences": {
            n: {
                "precision": per_seq[n].precision.tolist(),
                "success": per_seq[n].success.tolist(),
                "auc": per_seq[n].auc,
                "precision_at_20": per_seq[n].precision_at_20,
            }
            for n in names
        },
        "summary": {
            "precision": mean_precision.tolist(),
            "success": mean_success.tolist(),
            "precision_at_20": float(mean_precision[20]),
            "auc": float(mean_success.mean()),
        },
    }
    with open(args.out_json, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
    print(
        f"precision@20 {payload['summary']['precision_at_20']:.3f}, "
        f"success AUC {payload['summary']['auc']:.3f}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cftrack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config field (repeatable)",
        )

    p = sub.add_parser("pretrain", help="train the base auto-encoder")
    p.add_argument("feature_dir")
    p.add_argument("out_model")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train-experts", help="cluster and train expert models")
    p.add_argument("feature_dir")
    p.add_argument("base_model")
    p.add_argument("out_dir")
    common(p)
    p.set_defaults(func=cmd_train_experts)

    p = sub.add_parser("track", help="run the tracker over one sequence")
    p.add_argument("sequence_dir")
    p.add_argument("models_dir")
    p.add_argument("out_csv")
    p.add_argument(
        "--features",
        default="builtin",
        help="feature source: 'builtin' or 'fmap:<dir>'",
    )
    common(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score result CSVs against ground truth")
    p.add_argument("results_dir")
    p.add_argument("sequences_dir")
    p.add_argument("out_json")
    common(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
