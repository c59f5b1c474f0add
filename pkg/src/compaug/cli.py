"""Command-line entry point: ``compaug {synth,train,predict,explain,evaluate}``.

Exit codes: 0 success, 1 computational failure (e.g. diverged training),
2 usage or validation error (bad flags, malformed files, violated conditions).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import serialize
from .data import SyntheticSpec, generate_synthetic, load_dataset, plant_metadata, train_val_split, write_corpus
from .errors import CompAugError, DivergedLoss
from .evaluation import DEFAULT_SEEDS, SCENARIOS, evaluate_loso
from .explain import ExplainConfig, explain, render_svg
from .metrics import confusion_matrix, format_results, macro_f1, summarize
from .model import MODEL_KINDS
from .predict import tta_vote_arrays
from .training import CompetitiveConfig, check_condition_ii, train_competitive

log = logging.getLogger("compaug")

EXIT_OK, EXIT_COMPUTE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None


def _run_config(args, skip_n1: bool = False) -> CompetitiveConfig:
    cfg = CompetitiveConfig()
    if getattr(args, "config", None):
        cfg = serialize.load_file(args.config, expected="CompetitiveConfig")
    train = cfg.train
    if args.seed is not None:
        train = replace(train, seed=args.seed)
    if getattr(args, "max_epochs", None) is not None:
        train = replace(train, max_epochs=args.max_epochs)
    overrides = {"train": train}
    for flag, name in (("n1", "n1"), ("n2", "n2"), ("model", "model_kind"), ("hidden", "hidden")):
        if skip_n1 and flag == "n1":
            continue
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "no_augment", False):
        overrides["augment"] = False
    return replace(cfg, **overrides)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    doc = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        doc["seed"] = args.seed
    spec = SyntheticSpec.from_dict(doc)
    dataset = generate_synthetic(spec)
    out = Path(args.out)
    windowing = {"length": spec.window_length, "train_overlap": 0.0, "test_overlap": 0.0}
    write_corpus(dataset, out, windowing)
    (out / "plant.json").write_text(json.dumps(plant_metadata(spec), indent=2, sort_keys=True) + "\n")
    (out / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(dataset)} windows for {len(dataset.subjects)} subjects to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args, skip_n1=True)
    dataset = load_dataset(args.corpus, split="train")
    train, val = train_val_split(dataset, cfg.val_frac, np.random.default_rng(cfg.seed))
    if args.n1 is not None:
        # report the data-driven limit before the config's own bounds
        if cfg.augment and not args.no_augment and cfg.condition_ii == "strict":
            check_condition_ii(train, args.n1)
        cfg = _run_config(args)
    artifact, history = train_competitive(train, val, cfg)
    serialize.dump_file(artifact, args.out)
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".log.tsv")
    log_path.write_text(history.to_text())
    print(f"trained {cfg.model_kind} for {len(history.records)} epochs (best {history.best_epoch}); "
          f"artifact {args.out}, log {log_path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    artifact = serialize.load_file(args.artifact, expected="ModelArtifact")
    dataset = load_dataset(args.corpus, split="test")
    n2 = 0 if args.no_tta else args.n2
    votes = tta_vote_arrays(artifact, dataset.values, n2, seed=args.seed)
    lines = [serialize.Prediction(i, dataset.subject_ids[i], int(dataset.labels[i]), votes.record(i))
             for i in range(len(votes))]
    Path(args.out).write_text(serialize.dumps_lines(lines))
    m = confusion_matrix(votes.final, dataset.labels, dataset.n_classes)
    print(f"windows={len(dataset)} n2={n2} macro_f1={macro_f1(m, args.paper_literal_f1)!r}")
    return EXIT_OK


def cmd_explain(args) -> int:
    artifact = serialize.load_file(args.artifact, expected="ModelArtifact")
    dataset = load_dataset(args.corpus, split="test")
    if not 0 <= args.window < len(dataset):
        raise UsageError(f"--window {args.window} out of range [0, {len(dataset)})")
    cfg = serialize.load_file(args.config, expected="ExplainConfig") if args.config else ExplainConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    window = dataset.window(args.window)
    e = explain(artifact, window, cfg)
    serialize.dump_file(e, args.out_json)
    Path(args.out_svg).write_text(render_svg(e, window))
    print(f"window {args.window}: predicted {artifact.class_names[e.predicted_class]}; "
          f"wrote {args.out_json} and {args.out_svg}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    dataset = load_dataset(args.corpus, split="train")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else list(DEFAULT_SEEDS)
    rows = evaluate_loso(dataset, args.scenario or list(SCENARIOS), seeds, cfg, args.dataset_name,
                         args.workers, args.paper_literal_f1)
    Path(args.out).write_text(format_results(rows))
    for name, s in summarize(rows).items():
        print(f"{name}\tmean={s['mean']:.4f}\tstd={s['std']:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _add_run_flags(p, with_n2=True):
    p.add_argument("--config", help="CompetitiveConfig JSON document (see docs/schemas)")
    p.add_argument("--seed", type=int, help="run seed (default: the config's train.seed, 0)")
    p.add_argument("--n1", type=int, help="transforms drawn per training epoch (default 20)")
    if with_n2:
        p.add_argument("--n2", type=int, help="test-time variants per window (default 10)")
    p.add_argument("--no-augment", action="store_true", help="train without augmentation")
    p.add_argument("--model", choices=MODEL_KINDS, help="reference classifier (default mlp)")
    p.add_argument("--hidden", type=int, help="MLP hidden width (default 128)")
    p.add_argument("--max-epochs", type=int, help="epoch cap (default 500)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compaug", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic CSV corpus with planted ground truth")
    p.add_argument("--config", help="SyntheticSpec JSON (fields default when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="overrides the spec's seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and freeze its transform set into an artifact")
    p.add_argument("--corpus", required=True, help="corpus manifest.json")
    p.add_argument("--out", required=True, help="artifact JSON path")
    p.add_argument("--log", help="training log TSV (default: <out>.log.tsv)")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="vote over test-time variants and write one record per window")
    p.add_argument("--artifact", required=True, help="artifact JSON from 'train'")
    p.add_argument("--corpus", required=True, help="corpus manifest.json")
    p.add_argument("--out", required=True, help="line-delimited prediction records")
    p.add_argument("--n2", type=int, default=10, help="test-time variants per window (default 10)")
    p.add_argument("--no-tta", action="store_true", help="base predictions only (same as --n2 0)")
    p.add_argument("--seed", type=int, default=0, help="variant selection seed (default 0)")
    p.add_argument("--paper-literal-f1", action="store_true", help="F1 without the factor 2")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="explain one window as JSON and SVG")
    p.add_argument("--artifact", required=True, help="artifact JSON from 'train'")
    p.add_argument("--corpus", required=True, help="corpus manifest.json")
    p.add_argument("--window", type=int, required=True, help="window index in the windowed corpus")
    p.add_argument("--out-json", required=True, help="explanation JSON path")
    p.add_argument("--out-svg", required=True, help="SVG path")
    p.add_argument("--config", help="ExplainConfig JSON document")
    p.add_argument("--seed", type=int, help="probe seed (overrides the config)")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate", help="leave-one-subject-out results over the ablation scenarios")
    p.add_argument("--corpus", required=True, help="corpus manifest.json")
    p.add_argument("--out", required=True, help="results table TSV")
    p.add_argument("--scenario", action="append", choices=list(SCENARIOS),
                   help="restrict to a scenario (repeatable; default all four)")
    p.add_argument("--seeds", help="comma-separated seeds (default 1,2,3,4,5)")
    p.add_argument("--workers", type=int, default=1, help="concurrent training jobs (default 1)")
    p.add_argument("--dataset-name", default="dataset", help="label for the dataset column")
    p.add_argument("--paper-literal-f1", action="store_true", help="F1 without the factor 2")
    _add_run_flags(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CompAugError, UsageError, OSError) as exc:
        print(f"compaug {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergedLoss, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"compaug {args.command}: computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
