"""Command-line entry points.

Subcommands: ``train``, ``eval``, ``table``, ``attack``, ``visualize``,
``faces-gen``, ``digits-gen``.  Settings come from an optional JSON config
document; individual flags override fields.  Failures exit nonzero with a
machine-readable JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import adversarial, harness
from .datasets import (FaceSpec, export_dataset_pgm, generate_faces, load_mnist,
                       sample_per_class, save_idx_dataset, save_manifest,
                       synthesize_digits)
from .harness import ExperimentConfig, export_attack_set, export_visuals, run_table
from .pipeline import load_pipeline, save_pipeline, train_pipeline


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    doc = json.loads(Path(path).read_text())
    return ExperimentConfig.from_dict(doc)


def _override(cfg: ExperimentConfig, args) -> ExperimentConfig:
    from dataclasses import replace
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seeds"] = (args.seed,)
    if getattr(args, "out", None) is not None:
        updates["out_dir"] = args.out
    if getattr(args, "dataset", None) is not None:
        updates["dataset"] = args.dataset
    if getattr(args, "samples", None):
        updates["samples_per_class"] = tuple(args.samples)
    return replace(cfg, **updates) if updates else cfg


def _dataset_from_args(cfg: ExperimentConfig, args):
    if args.images and args.labels:
        return load_mnist(args.images, args.labels)
    train_pool, _ = harness.load_corpora(cfg)
    return train_pool


def cmd_train(args) -> int:
    cfg = _override(_load_config(args.config), args)
    pool = _dataset_from_args(cfg, args)
    seed = cfg.seeds[0]
    train = sample_per_class(pool, args.samples_per_class, seed=seed)
    pipe_cfg = cfg.pipeline if cfg.dataset != "faces" else harness._face_config(cfg)
    pipeline = train_pipeline(train, pipe_cfg, seed=seed, verbose=not args.quiet)
    out = Path(cfg.out_dir) / "checkpoint"
    save_pipeline(out, pipeline)
    print(json.dumps({"checkpoint": str(out), "train_size": len(train)}))
    return 0


def cmd_eval(args) -> int:
    cfg = _override(_load_config(args.config), args)
    pipeline = load_pipeline(args.checkpoint)
    if args.images and args.labels:
        test = load_mnist(args.images, args.labels)
    else:
        _, test_pool = harness.load_corpora(cfg)
        test = harness._test_subset(test_pool, cfg.test_size, seed=cfg.seeds[0] + 1000)
    feats = pipeline.features(test.images)
    posts = pipeline.pathway_posteriors(feats)
    integrated = pipeline.integrated_posteriors(feats)
    final, base, details = pipeline.predict_with_reselection(test.images)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "predictions.csv"
    with open(log_path, "w", newline="") as f:
        writer = csv.writer(f)
        names = sorted(posts)
        writer.writerow(["index", "true_label", "final_label", "base_label",
                         "candidates", "mask_size", "integrated_posterior"]
                        + [f"posterior_{n}" for n in names])
        for i in range(len(test)):
            writer.writerow([
                i, int(test.labels[i]), int(final[i]), int(base[i]),
                "|".join(map(str, details[i]["candidates"])),
                details[i]["mask_size"],
                json.dumps([round(float(p), 6) for p in integrated[i]]),
            ] + [json.dumps([round(float(p), 6) for p in posts[n][i]]) for n in names])
    result = {
        "test_size": len(test),
        "integrated_error": float((integrated.argmax(axis=1) != test.labels).mean()),
        "reselection_error": float((final != test.labels).mean()),
        "log": str(log_path),
    }
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_table(args) -> int:
    cfg = _override(_load_config(args.config), args)
    from dataclasses import replace
    cfg = replace(cfg, table=args.table)
    if args.table == 3 and cfg.dataset == "digits" and args.dataset is None:
        cfg = replace(cfg, dataset="faces")
    report = run_table(cfg, verbose=not args.quiet)
    print(json.dumps({"table": args.table, "summary": report.summary},
                     indent=2, sort_keys=True))
    return 0


def cmd_attack(args) -> int:
    cfg = _override(_load_config(args.config), args)
    pool = _dataset_from_args(cfg, args)
    seed = cfg.seeds[0]
    train = sample_per_class(pool, args.samples_per_class, seed=seed)
    surrogate = adversarial.train_surrogate(train, cfg.surrogate, seed=seed)
    _, test_pool = harness.load_corpora(cfg)
    test = harness._test_subset(test_pool, cfg.test_size, seed=seed + 1000)
    attack = adversarial.PerturbConfig(target=args.target or cfg.attack_target,
                                       eps_step=cfg.attack_eps,
                                       max_steps=cfg.attack_steps)
    manifest = export_attack_set(test, surrogate, attack, cfg.out_dir)
    print(json.dumps({"success_rate": manifest["success_rate"],
                      "images_file": manifest["images_file"],
                      "labels_file": manifest["labels_file"]}, indent=2))
    return 0


def cmd_visualize(args) -> int:
    cfg = _override(_load_config(args.config), args)
    pipeline = load_pipeline(args.checkpoint)
    manifest = export_visuals(pipeline, cfg.out_dir)
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def cmd_faces_gen(args) -> int:
    ds = generate_faces(FaceSpec(), per_class=args.per_class, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_idx_dataset(ds, out / "faces-images-idx3-ubyte", out / "faces-labels-idx1-ubyte")
    files = export_dataset_pgm(ds, out / "pgm", seed=args.seed) if args.pgm else []
    save_manifest(out / "faces_manifest.json", seed=args.seed, labels=ds.labels,
                  files=files, extra={"classes": len(FaceSpec().class_shapes)})
    print(json.dumps({"count": len(ds), "out": str(out)}))
    return 0


def cmd_digits_gen(args) -> int:
    ds = synthesize_digits(per_class=args.per_class, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_idx_dataset(ds, out / "digits-images-idx3-ubyte", out / "digits-labels-idx1-ubyte")
    save_manifest(out / "digits_manifest.json", seed=args.seed, labels=ds.labels)
    print(json.dumps({"count": len(ds), "out": str(out)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semvision",
        description="Multi-pathway visual recognition experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override the seed list")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--dataset", choices=["digits", "faces", "idx"])
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("train", help="train a pipeline and save a checkpoint")
    common(p)
    p.add_argument("--samples-per-class", type=int, default=10)
    p.add_argument("--images", help="IDX images path (training pool)")
    p.add_argument("--labels", help="IDX labels path (training pool)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint; writes a prediction log")
    common(p)
    p.add_argument("checkpoint")
    p.add_argument("--images", help="IDX images path (test set)")
    p.add_argument("--labels", help="IDX labels path (test set)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("table", help="run a full error table")
    common(p)
    p.add_argument("--table", type=int, choices=[1, 2, 3], default=1)
    p.add_argument("--samples", type=int, nargs="+",
                   help="samples-per-class grid override")
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("attack", help="generate a perturbed IDX test set")
    common(p)
    p.add_argument("--samples-per-class", type=int, default=10,
                   help="surrogate training size")
    p.add_argument("--target", type=int, help="attack target class")
    p.add_argument("--images", help="IDX images path (surrogate training pool)")
    p.add_argument("--labels", help="IDX labels path (surrogate training pool)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("visualize", help="export filter/concept images")
    common(p)
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("faces-gen", help="synthesize the facial shape dataset")
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="faces_data")
    p.add_argument("--pgm", action="store_true", help="also export PGM files")
    p.set_defaults(func=cmd_faces_gen)

    p = sub.add_parser("digits-gen", help="synthesize a digit corpus as IDX files")
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="digits_data")
    p.set_defaults(func=cmd_digits_gen)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
