"""Command line entry point: ``vqa-augment <command> ...``.

Option values resolve as config file < environment < flags. The config file
(``--config``, TOML) may hold top-level keys and a table per command, e.g.
``[train] epochs = 20``; keys use the option names with ``_`` for ``-``.
Environment variables are ``VQA_AUGMENT_<OPTION>`` (upper case).

Exit codes: 0 success, 1 validation failure, 2 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path


from . import __version__
from ._toml import load_toml
from .augmentation import AugmentationError, AugmentationPlan, PlanError, augment_split, load_plan
from .dataset import (EGOVQA_TYPE_COUNTS, ManifestError, RowValidationError, build_pools, load_manifest,
                      load_splits, random_splits, save_manifest, type_counts)
from .features import FeatureError, FeatureStore, save_clip, synth_features
from .harness import ProtocolError, bias_report, bias_text, evaluate, run_matrix
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .text import EmbeddingFileError, load_embeddings, synth_embeddings, vocabulary
from .training import TrainConfig, TrainingDivergedError, train

log = logging.getLogger("vqa_augment")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
ENV_PREFIX = "VQA_AUGMENT_"

# option -> (type, built-in default)
DEFAULTS = {
    "seed": (int, 0),
    "frames": (int, 16),
    "dims": (None, [16, 16]),
    "embed_dim": (int, 8),
    "hidden": (int, 512),
    "attn": (int, 256),
    "n_max": (int, None),
    "lr": (float, 1e-3),
    "batch_size": (int, 8),
    "epochs": (int, 50),
    "beta1": (float, 0.9),
    "beta2": (float, 0.999),
    "epsilon": (float, 1e-8),
    "dtype": (str, "float32"),
    "n_splits": (int, 3),
    "test_fraction": (float, 0.25),
}


class Settings:
    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file: dict = {}
        if getattr(args, "config", None):
            data = load_toml(args.config)
            self.file = {k: v for k, v in data.items() if not isinstance(v, dict)}
            self.file.update(data.get(args.command, {}))

    def get(self, name: str):
        typ, default = DEFAULTS.get(name, (None, None))
        flag = getattr(self.args, name, None)
        if flag is not None:
            return flag
        env = os.environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            if name == "dims":
                return [int(x) for x in env.replace(",", " ").split()]
            return typ(env) if typ else env
        if name in self.file:
            return self.file[name]
        return default


def _add_train_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--embeddings", help="word-vector text file; synthetic vectors when omitted")
    p.add_argument("--embed-dim", dest="embed_dim", type=int, help="width of synthetic embeddings (default 8)")
    p.add_argument("--hidden", type=int, help="encoder output width H (default 512)")
    p.add_argument("--attn", type=int, help="attention hidden width h (default 256)")
    p.add_argument("--n-max", dest="n_max", type=int, help="frame cap (uniform subsampling)")
    p.add_argument("--lr", type=float, help="learning rate (default 1e-3)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="questions per batch (default 8)")
    p.add_argument("--epochs", type=int, help="epochs (default 50)")
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--dtype", choices=["float32", "float64"])


def _global_opts(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies use SUPPRESS so they do not clobber values given before the command
    d = {"default": argparse.SUPPRESS} if suppress else {}
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, help="global seed (default 0)", **d)
    p.add_argument("--config", help="TOML config file", **d)
    p.add_argument("-v", "--verbose", action="store_true", **d)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_opts(suppress=True)
    parser = argparse.ArgumentParser(prog="vqa-augment", parents=[_global_opts(suppress=False)],
                                     description="VideoQA augmentation and ST-VQA training at desk scale")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a manifest against the row schema")
    p.add_argument("manifest")

    p = sub.add_parser("stats", parents=[common], help="question-type counts and label-position bias")
    p.add_argument("manifest")
    p.add_argument("--splits", help="splits JSON; bias is pooled over the train rows of every split")
    p.add_argument("--json", dest="json_out", help="also write the statistics as JSON")

    p = sub.add_parser("augment", parents=[common], help="augment the train rows of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True, help="feature store directory")
    p.add_argument("--plan", required=True, help="augmentation plan TOML")
    p.add_argument("--out", required=True, help="output manifest")
    p.add_argument("--features-out", dest="features_out", help="where flipped features go (default: --features)")
    p.add_argument("--report", help="augmentation report JSON (default: <out>.report.json)")

    p = sub.add_parser("synth-features", parents=[common], help="write a synthetic feature store for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--frames", type=int, help="frames per clip (default 16)")
    p.add_argument("--dims", type=int, nargs=2, metavar=("D_A", "D_M"), help="feature widths (default 16 16)")

    p = sub.add_parser("train", parents=[common], help="train on the train rows, select on the test rows")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--plan", help="augmentation plan TOML applied to the train rows first")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="append per-epoch JSON records here")
    _add_train_opts(p)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test rows")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--json", dest="json_out", help="write the report as JSON")

    p = sub.add_parser("matrix", parents=[common], help="train/evaluate every augmentation row on every split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--splits", help="splits JSON; seeded random splits when omitted")
    p.add_argument("--n-splits", dest="n_splits", type=int, help="random splits to draw (default 3)")
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--resample-copies", dest="resample_copies", type=int, default=None)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    _add_train_opts(p)
    return parser


# --- helpers ---------------------------------------------------------------

def _store(path: str, seed: int) -> FeatureStore:
    store = FeatureStore(path, surrogate_seed=seed)
    if not store.index:
        raise FeatureError(f"no .feat files in {path}")
    return store


def _store_dims(store: FeatureStore) -> tuple[int, int]:
    if store.dims is None:
        store.load(store.clip_ids()[0])
    return store.dims


def _table(s: Settings, rows, dim: int | None = None):
    """Embeddings from ``--embeddings``, else seeded synthetic vectors.

    Synthetic vectors depend only on (seed, token), so ``eval`` with the
    training seed sees the same vectors that ``train`` did.
    """
    path = s.get("embeddings")
    if path:
        return load_embeddings(path)
    texts = [t for r in rows for t in (r.question, *r.candidates)]
    return synth_embeddings(sorted(vocabulary(texts)), dim or s.get("embed_dim"), s.get("seed"))


def _model_cfg(s: Settings, store: FeatureStore, table) -> ModelConfig:
    return ModelConfig(E=table.dim, D=sum(_store_dims(store)), H=s.get("hidden"), h=s.get("attn"),
                       N_max=s.get("n_max"))


def _train_cfg(s: Settings) -> TrainConfig:
    return TrainConfig(learning_rate=s.get("lr"), batch_size=s.get("batch_size"), epochs=s.get("epochs"),
                       seed=s.get("seed"), beta1=s.get("beta1"), beta2=s.get("beta2"),
                       epsilon=s.get("epsilon"), dtype=s.get("dtype"))


def _augment_train(rows, store, plan):
    train_rows = [r for r in rows if r.split == "train"]
    test_rows = [r for r in rows if r.split == "test"]
    aug, report = augment_split(train_rows, build_pools(train_rows), store, plan)
    return aug, test_rows, report


# --- commands --------------------------------------------------------------

def cmd_validate(s: Settings) -> int:
    rows = load_manifest(s.args.manifest)
    print(f"ok: {len(rows)} rows")
    return EXIT_OK


def cmd_stats(s: Settings) -> int:
    rows = load_manifest(s.args.manifest)
    counts = type_counts(rows)
    if s.args.splits:
        bias_rows = []
        for split in load_splits(s.args.splits):
            bias_rows.extend(split.apply(rows)[0])
    else:
        bias_rows = [r for r in rows if r.split == "train"]
    bias = bias_report(bias_rows)
    print("Question type counts")
    for q, n in counts.items():
        print(f"  {q.value:<7} {n:>5}")
    print(f"  {'total':<7} {sum(counts.values()):>5}")
    if counts == EGOVQA_TYPE_COUNTS:
        print("  (matches the EgoVQA per-type quantities)")
    print()
    print(bias_text(bias), end="")
    if s.args.json_out:
        data = {
            "type_counts": {q.value: n for q, n in counts.items()},
            "bias_rows": len(bias_rows),
            "bias": {q.value: {"counts": b.counts, "total": b.total, "shares": b.shares, "flagged": b.flagged}
                     for q, b in bias.items()},
        }
        Path(s.args.json_out).write_text(json.dumps(data, indent=1) + "\n")
    return EXIT_OK


def cmd_augment(s: Settings) -> int:
    rows = load_manifest(s.args.manifest)
    plan = load_plan(s.args.plan)
    store = _store(s.args.features, s.get("seed"))
    aug, test_rows, report = _augment_train(rows, store, plan)
    out_dir = Path(s.args.features_out or s.args.features)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = 0
    for clip_id in sorted(store.memory):
        path = out_dir / f"{clip_id}.feat"
        if not path.exists():
            save_clip(store.memory[clip_id], path)
            written += 1
    save_manifest(aug + test_rows, s.args.out)
    rep = report.to_dict()
    rep["plan"] = plan.to_dict()
    rep["test_rows_passed_through"] = len(test_rows)
    rep["feature_files_written"] = written
    report_path = s.args.report or (s.args.out + ".report.json")
    Path(report_path).write_text(json.dumps(rep, indent=1, sort_keys=True) + "\n")
    print(f"{report.input_rows} train rows -> {report.output_rows}; "
          f"{len(test_rows)} test rows unchanged; {len(report.skips)} skips; report {report_path}")
    return EXIT_OK


def cmd_synth_features(s: Settings) -> int:
    rows = load_manifest(s.args.manifest)
    out = Path(s.args.out)
    out.mkdir(parents=True, exist_ok=True)
    dims = tuple(s.get("dims"))
    frames, seed = s.get("frames"), s.get("seed")
    store = FeatureStore(out, dims=dims)
    clips = sorted({r.clip_id for r in rows})
    for clip in clips:
        store.add(synth_features(clip, frames, dims, seed), write=True)
    print(f"wrote {len(clips)} clips ({frames} frames, dims {dims[0]}+{dims[1]}) to {out}")
    return EXIT_OK


def cmd_train(s: Settings) -> int:
    rows = load_manifest(s.args.manifest)
    store = _store(s.args.features, s.get("seed"))
    plan = load_plan(s.args.plan) if s.args.plan else None
    if plan is not None:
        train_rows, test_rows, report = _augment_train(rows, store, plan)
        print(f"augmented {report.input_rows} -> {report.output_rows} train rows ({plan.label})")
    else:
        train_rows = [r for r in rows if r.split == "train"]
        test_rows = [r for r in rows if r.split == "test"]
    # built after augmentation so flipped text is covered by the synthetic vocabulary
    table = _table(s, [*train_rows, *test_rows])
    mcfg, tcfg = _model_cfg(s, store, table), _train_cfg(s)
    try:
        res = train(train_rows, store, table, mcfg, tcfg, plan=plan, test_rows=test_rows,
                    metrics_path=s.args.metrics,
                    on_epoch=lambda r: log.info("epoch %d loss %.4f train %.3f test %s", r["epoch"],
                                                r["train_loss"], r["train_acc"], r["test_acc"]))
    except TrainingDivergedError as e:
        save_checkpoint(e.params, s.args.out, mcfg)
        print(f"training diverged: {e}; last good checkpoint saved to {s.args.out}", file=sys.stderr)
        return EXIT_RUNTIME
    save_checkpoint(res.params, s.args.out, mcfg)
    last = res.metrics[-1] if res.metrics else None
    print(f"trained {len(res.metrics)} epochs; best epoch {res.best_epoch} by {res.selection}; "
          f"final {last}; checkpoint {s.args.out}")
    return EXIT_OK


def cmd_eval(s: Settings) -> int:
    rows = load_manifest(s.args.manifest)
    params, mcfg = load_checkpoint(s.args.checkpoint)
    if mcfg is None:
        raise ValueError("checkpoint has no model config")
    store = _store(s.args.features, s.get("seed"))
    table = _table(s, rows, mcfg.E)
    if table.dim != mcfg.E:
        raise ValueError(f"embedding width {table.dim} does not match checkpoint E={mcfg.E}")
    test_rows = [r for r in rows if r.split == "test"]
    rep = evaluate(params, test_rows, store, table, mcfg)
    print(f"accuracy {rep.overall_accuracy:.2f}% ({rep.correct}/{rep.total})")
    for q, acc in rep.per_type_accuracy.items():
        c, t = rep.counts[q]
        print(f"  {q.value:<7} {'-' if acc is None else f'{acc:6.2f}%'}  ({c}/{t})")
    if s.args.json_out:
        Path(s.args.json_out).write_text(json.dumps(rep.to_dict(), indent=1) + "\n")
    return EXIT_OK


def cmd_matrix(s: Settings) -> int:
    from .augmentation import TABLE2_PLANS

    rows = load_manifest(s.args.manifest)
    seed = s.get("seed")
    store = _store(s.args.features, seed)
    table = _table(s, rows)
    if s.args.splits:
        splits = load_splits(s.args.splits)
    else:
        splits = random_splits(rows, s.get("n_splits"), s.get("test_fraction"), seed)
    copies = s.get("resample_copies")
    plans = [(label, AugmentationPlan(**{**p.to_dict(), "seed": seed,
                                         **({"resample_copies": copies} if copies is not None else {})}))
             for label, p in TABLE2_PLANS]
    result = run_matrix(rows, splits, plans, _model_cfg(s, store, table), _train_cfg(s), store, table)
    out = Path(s.args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table2.txt").write_text(result.table2_text())
    (out / "table2.csv").write_text(result.table2_csv())
    (out / "table3.txt").write_text(result.table3_text())
    (out / "table3.csv").write_text(result.table3_csv())
    # stripped row labels repeat, so cells are keyed by the plan label
    plan_of = {label: p.label for label, p in plans}

    def key(k):
        return f"{plan_of[k[0]]}|{k[1]}"

    (out / "cells.json").write_text(json.dumps({
        "cells": {key(k): rep.to_dict() for k, rep in result.cells.items()},
        "failures": {key(k): v for k, v in result.failures.items()},
        "augmentation": {key(k): v for k, v in result.augmentation.items()},
    }, indent=1) + "\n")
    print(result.table2_text())
    print(result.table3_text())
    return EXIT_RUNTIME if result.failures else EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "stats": cmd_stats,
    "augment": cmd_augment,
    "synth-features": cmd_synth_features,
    "train": cmd_train,
    "eval": cmd_eval,
    "matrix": cmd_matrix,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = Settings(args)
        return COMMANDS[args.command](settings)
    except (ManifestError, RowValidationError, EmbeddingFileError, ProtocolError, AugmentationError,
            PlanError, FeatureError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (FloatingPointError, OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
