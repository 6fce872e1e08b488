"""Command-line interface.

Subcommands: ``extend`` (derive question-question training triples from
threads), ``train``, ``evaluate``, ``predict``, and ``gradcheck`` (finite-
difference check of the full model gradient).

Exit codes: 0 success, 1 usage or configuration errors, 2 data or checkpoint
errors, 3 numeric failures (non-finite losses, gradient check above
tolerance).
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import nn_core as nn
from .dataset import (
    CorpusError,
    binarize,
    extend_dataset,
    load_corpus,
    positive_rates,
    save_corpus,
    threads_from_corpus,
)
from .evaluation import (
    build_rows,
    evaluate_scores,
    score_triples,
    tune_alpha,
    weighted_combine,
    write_predictions,
)
from .model import TASKS, MtlModel, PairModel, apply_word_vectors, load_word_vectors
from .synthetic import gradcheck_corpus, vocabulary_for
from .text_pipeline import build_vocabulary, preprocess
from .training import (
    CheckpointError,
    TrainConfig,
    joint_loss,
    load_checkpoint,
    save_checkpoint,
    train,
    write_history_csv,
)

GRADCHECK_TOLERANCE = 1e-4

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(ValueError):
    pass


def read_config_file(path: str) -> dict[str, str]:
    """``key=value`` per line; blank lines and ``#`` comments ignored."""
    values: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}: line {lineno}: expected key=value, got {line!r}")
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    return values


_CONFIG_KEYS = {
    "epochs": int,
    "batch_size": int,
    "lr": float,
    "rho": float,
    "eps": float,
    "dropout_input": float,
    "dropout_hidden": float,
    "patience": int,
    "stopping": str,
    "seed": int,
    "tasks": str,
    "m": int,
    "d_w": int,
    "d_feat": int,
    "filter_width": int,
    "max_len": int,
    "min_count": int,
    "model": str,
    "task": str,
    "alpha": float,
}


def merged_option(args: argparse.Namespace, config: dict[str, str], key: str, default):
    """Flag value if given, else config-file value, else the default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in config:
        caster = _CONFIG_KEYS[key]
        try:
            return caster(config[key])
        except ValueError as exc:
            raise UsageError(f"config key {key}: {exc}") from exc
    return default


def _check_config_keys(config: dict[str, str]) -> None:
    unknown = set(config) - set(_CONFIG_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")


def _parse_tasks(spec: str) -> tuple[str, ...]:
    tasks = tuple(spec.replace(",", "").upper())
    for t in tasks:
        if t not in TASKS:
            raise UsageError(f"unknown task {t!r} (expected letters from {''.join(TASKS)})")
    if not tasks:
        raise UsageError("empty task list")
    return tasks


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cqarank", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extend", help="derive question-question triples from comment threads")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--derived-only", action="store_true",
                   help="write only the derived triples instead of originals + derived")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="key=value option file; flags override it")
    p.add_argument("--model", choices=["mtl", "pair"])
    p.add_argument("--task", choices=list(TASKS), help="task for the pair model")
    p.add_argument("--tasks", help="tasks to train, e.g. ABC or AC")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--dropout-input", dest="dropout_input", type=float)
    p.add_argument("--dropout-hidden", dest="dropout_hidden", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--stopping", choices=["global", "per_task"])
    p.add_argument("--seed", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--d-w", dest="d_w", type=int)
    p.add_argument("--d-feat", dest="d_feat", type=int)
    p.add_argument("--filter-width", dest="filter_width", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--vectors", help="pretrained word vector file")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("evaluate", help="score a corpus and report MAP/MRR")
    p.add_argument("--model", required=True, dest="model_path")
    p.add_argument("--corpus", required=True)
    p.add_argument("--tasks")
    p.add_argument("--out", help="prediction TSV path (per-task suffix when several tasks)")
    p.add_argument("--alpha", type=float, help="blend weight for the search-rank prior")
    p.add_argument("--tune-alpha", action="store_true",
                   help="grid-search the blend weight and report the best")

    p = sub.add_parser("predict", help="write ranked predictions as TSV")
    p.add_argument("--model", required=True, dest="model_path")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=list(TASKS))
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("gradcheck", help="finite-difference check of the model gradient")
    p.add_argument("--probes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--delta", type=float, default=1e-4)

    return parser


def cmd_extend(args: argparse.Namespace) -> int:
    data = load_corpus(args.corpus)
    threads = threads_from_corpus(data)
    derived = extend_dataset(threads)
    out = derived if args.derived_only else list(data) + derived
    save_corpus(args.out, out)
    rates = positive_rates(out)
    print(f"original={len(data)} extended={len(derived)} total={len(data) + len(derived)}")
    print(f"positive rates: A={rates[0]:.2f}% B={rates[1]:.2f}% C={rates[2]:.2f}%")
    print(f"wrote {len(out)} triples to {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config_file = read_config_file(args.config) if args.config else {}
    _check_config_keys(config_file)

    kind = merged_option(args, config_file, "model", "mtl")
    if kind not in ("mtl", "pair"):
        raise UsageError(f"model must be 'mtl' or 'pair', got {kind!r}")
    tasks_spec = merged_option(args, config_file, "tasks", None)
    task = merged_option(args, config_file, "task", None)
    if kind == "pair":
        if task is None:
            raise UsageError("the pair model needs --task")
        tasks = (task,)
    else:
        tasks = _parse_tasks(tasks_spec) if tasks_spec else TASKS

    train_conf = TrainConfig(
        epochs=merged_option(args, config_file, "epochs", 100),
        batch_size=merged_option(args, config_file, "batch_size", 32),
        lr=merged_option(args, config_file, "lr", 0.001),
        rho=merged_option(args, config_file, "rho", 0.9),
        eps=merged_option(args, config_file, "eps", 1e-6),
        dropout_input=merged_option(args, config_file, "dropout_input", 0.4),
        dropout_hidden=merged_option(args, config_file, "dropout_hidden", 0.7),
        patience=merged_option(args, config_file, "patience", 10),
        stopping=merged_option(args, config_file, "stopping", "global"),
        seed=merged_option(args, config_file, "seed", 0),
        tasks=tasks,
    )

    train_data = load_corpus(args.corpus)
    dev_data = load_corpus(args.dev)

    texts = []
    for t in train_data:
        texts.append(preprocess(t.q_new_subject, t.q_new_body))
        texts.append(preprocess(t.q_rel_subject, t.q_rel_body))
        texts.append(preprocess(None, t.c_rel))
    vocab = build_vocabulary(texts, min_count=merged_option(args, config_file, "min_count", 1))

    hyper = dict(
        m=merged_option(args, config_file, "m", 100),
        d_w=merged_option(args, config_file, "d_w", 50),
        d_feat=merged_option(args, config_file, "d_feat", 5),
        filter_width=merged_option(args, config_file, "filter_width", 5),
        max_len=merged_option(args, config_file, "max_len", 100),
        seed=train_conf.seed,
    )
    if kind == "mtl":
        model = MtlModel(vocab, **hyper)
    else:
        model = PairModel(vocab, task=task, **hyper)

    if args.vectors:
        vectors = load_word_vectors(args.vectors, vocab, model.d_w)
        n = apply_word_vectors(model, vectors)
        if not args.quiet:
            print(f"loaded pretrained vectors for {n} tokens")

    log = None if args.quiet else print
    report = train(model, train_data, dev_data, train_conf, log=log)

    os.makedirs(args.out_dir, exist_ok=True)
    write_history_csv(os.path.join(args.out_dir, "history.csv"), report.history)
    if train_conf.stopping == "global":
        save_checkpoint(os.path.join(args.out_dir, "model.ckpt"), model)
        print(
            f"stopped at epoch {report.stop_epoch} "
            f"(best epoch {report.best_epoch['joint']}); wrote model.ckpt"
        )
    else:
        for t in tasks:
            save_checkpoint(os.path.join(args.out_dir, f"model_{t}.ckpt"), model,
                            params=report.snapshots[t])
            print(f"task {t}: best epoch {report.best_epoch[t]}; wrote model_{t}.ckpt")
        print(f"stopped at epoch {report.stop_epoch}")
    return EXIT_OK


def _combined(triples, scores, alpha):
    return [weighted_combine(s, t.google_rank, alpha) for s, t in zip(scores, triples)]


def _task_out_path(out: str, task: str, multi: bool) -> str:
    """Per-task file name when one --out path serves several tasks."""
    if not multi:
        return out
    root, ext = os.path.splitext(out)
    return f"{root}.{task}{ext}" if ext else f"{out}.{task}"


def cmd_evaluate(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.model_path)
    data = load_corpus(args.corpus)
    tasks = _parse_tasks(args.tasks) if args.tasks else tuple(model.tasks)
    scores = score_triples(model, data)
    for t in tasks:
        if t not in scores:
            raise UsageError(f"checkpoint scores tasks {model.tasks}, not {t!r}")
        task_scores = scores[t]
        suffix = ""
        if args.alpha is not None:
            task_scores = _combined(data, task_scores, args.alpha)
            suffix = f" alpha={args.alpha:.2f}"
        result = evaluate_scores(build_rows(data, task_scores, t))
        print(
            f"task {t}: MAP={result.map:.2f} MRR={result.mrr:.2f} "
            f"queries={result.query_count} skipped={result.skipped}{suffix}"
        )
        if args.tune_alpha:
            alpha, best = tune_alpha(model, data, t, scores=scores[t])
            print(f"task {t}: best alpha={alpha:.2f} MAP={best:.2f}")
        if args.out:
            path = _task_out_path(args.out, t, len(tasks) > 1)
            write_predictions(path, data, task_scores, t)
            print(f"wrote {path}")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.model_path)
    data = load_corpus(args.corpus, require_labels=False)
    task = args.task
    if task is None:
        if len(model.tasks) != 1:
            raise UsageError("--task is required for a multi-task checkpoint")
        task = model.tasks[0]
    if task not in model.tasks:
        raise UsageError(f"checkpoint scores tasks {model.tasks}, not {task!r}")
    scores = score_triples(model, data)[task]
    if args.alpha is not None:
        scores = _combined(data, scores, args.alpha)
    write_predictions(args.out, data, scores, task)
    print(f"wrote {len(data)} predictions to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    data = gradcheck_corpus()
    vocab = vocabulary_for(data)
    model = MtlModel(vocab, m=args.m, d_w=10, d_feat=3, seed=args.seed, dtype=np.float64)
    features = [model.featurize(t) for t in data]
    gold = [binarize(t) for t in data]

    def loss_fn() -> nn.Tensor:
        return nn.add_n(
            [joint_loss(model.predict(f, training=False), g, TASKS) for f, g in zip(features, gold)]
        )

    max_err = nn.grad_check(
        loss_fn,
        model.parameters(),
        probe_count=args.probes,
        delta=args.delta,
        rng=np.random.default_rng(args.seed),
    )
    print(f"gradcheck: max relative error {max_err:.3e} over {args.probes} probes")
    if max_err < GRADCHECK_TOLERANCE:
        print("gradcheck: PASS")
        return EXIT_OK
    print(f"gradcheck: FAIL (tolerance {GRADCHECK_TOLERANCE:.0e})")
    return EXIT_NUMERIC


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        if args.command == "extend":
            return cmd_extend(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "evaluate":
            return cmd_evaluate(args)
        if args.command == "predict":
            return cmd_predict(args)
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except nn.NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def app() -> None:
    sys.exit(main())


if __name__ == "__main__":
    app()
