"""Command-line interface: prepare, train, evaluate, verify, report.

Exit codes: 0 success, 2 usage or configuration error, 3 data or checkpoint
error, 4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .checkpoint import CheckpointError, load_checkpoint
from .data import DataError, kcore_filter, load_interactions, read_prepared, split, write_prepared
from .metrics import evaluate
from .model import EmbeddingModel
from .training import ConfigError, Trainer, TrainingError, load_config
from .verification import run_all

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_VERIFY = 4


def _parse_ratios(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--ratios needs three comma-separated floats, got {text!r}")
    try:
        r = tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"--ratios needs floats, got {text!r}") from exc
    return r  # validated by split()


def _parse_ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(p) for p in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"--ks needs comma-separated integers, got {text!r}") from exc
    if not ks or min(ks) < 1:
        raise ConfigError("--ks values must be positive")
    return ks


def _cmd_prepare(args) -> int:
    delimiter = {"tab": "\t", "comma": ",", "auto": None}[args.delimiter]
    store = load_interactions(args.input, delimiter=delimiter, atomic=args.atomic)
    print(f"loaded {store.n_interactions} interactions, {store.n_users} users, {store.n_items} items")
    if args.min_core > 0:
        store = kcore_filter(store, args.min_core)
        print(
            f"after {args.min_core}-core filter: {store.n_interactions} interactions, "
            f"{store.n_users} users, {store.n_items} items"
        )
    store = split(store, ratios=_parse_ratios(args.ratios), seed=args.seed)
    write_prepared(store, args.output)
    stats = store.stats()
    print(
        f"split (seed {args.seed}): {stats['n_train']} train / {stats['n_valid']} valid / "
        f"{stats['n_test']} test -> {args.output}"
    )
    return EXIT_OK


def _cmd_train(args) -> int:
    config = load_config(args.config)
    store = read_prepared(args.data)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {"config": config.to_dict(), "config_hash": config.config_hash()},
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    trainer = Trainer(config, store, out_dir=args.out)
    result = trainer.fit()
    for record in result.history:
        if "valid" in record:
            ndcg10 = next(r["ndcg"] for r in record["valid"] if r["k"] == 10)
            print(f"epoch {record['epoch']}: valid ndcg@10 {ndcg10:.4f}")
    test10 = result.test.ndcg[10]
    print(
        f"best epoch {result.best_epoch} (of {result.epochs_run} run); "
        f"test ndcg@10 {test10:.4f}; checkpoint {result.checkpoint_path}"
    )
    return EXIT_OK


def _model_from_checkpoint(path: str) -> tuple[EmbeddingModel, dict]:
    tensors, meta = load_checkpoint(path)
    for name in ("user_emb", "item_emb"):
        if name not in tensors:
            raise CheckpointError(f"{path}: checkpoint lacks tensor {name!r}")
    user_emb = tensors["user_emb"]
    item_emb = tensors["item_emb"]
    model = EmbeddingModel(user_emb.shape[0], item_emb.shape[0], user_emb.shape[1])
    model.user_emb.values[...] = user_emb
    model.item_emb.values[...] = item_emb
    return model, meta


def _cmd_evaluate(args) -> int:
    model, _ = _model_from_checkpoint(args.checkpoint)
    store = read_prepared(args.data)
    if store.n_users != model.n_users or store.n_items != model.n_items:
        raise DataError(
            f"checkpoint shape ({model.n_users} users, {model.n_items} items) does not match "
            f"data ({store.n_users} users, {store.n_items} items)"
        )
    result = evaluate(model, store, split=args.split, ks=_parse_ks(args.ks))
    payload = json.dumps(result.rows(), sort_keys=True, indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
    sys.stdout.write(payload)
    return EXIT_OK


def _cmd_verify(args) -> int:
    reports = run_all(
        seed=args.seed,
        include_timing=not args.skip_timing,
        strict_timing=args.strict_timing,
        inject_failure=args.inject_failure,
    )
    for r in reports:
        print(r.line())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump([r.to_dict() for r in reports], fh, sort_keys=True, indent=2)
            fh.write("\n")
    hard_failures = [r for r in reports if not r.passed and not r.advisory]
    if hard_failures:
        print(f"{len(hard_failures)} verification check(s) failed", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def _cmd_report(args) -> int:
    history_path = os.path.join(args.run, "history.json")
    config_path = os.path.join(args.run, "config.json")
    if not os.path.exists(history_path):
        raise DataError(f"no history.json under {args.run}; is this a training output directory?")
    with open(history_path, "r", encoding="utf-8") as fh:
        history = json.load(fh)
    config = None
    if os.path.exists(config_path):
        with open(config_path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    summary = {
        "run_dir": args.run,
        "config_hash": history.get("config_hash"),
        "best_epoch": history.get("best_epoch"),
        "epochs_run": history.get("epochs_run"),
        "stopped_early": history.get("stopped_early"),
        "best_valid_ndcg10": history.get("best_valid_ndcg10"),
        "test": history.get("test"),
    }
    if config:
        cfg = config.get("config", {})
        summary["loss_mode"] = cfg.get("loss_mode")
        summary["ablations"] = {
            flag: cfg.get(flag) for flag in ("no_ranker", "no_lp", "no_confidence")
        }
    if args.json:
        print(json.dumps(summary, sort_keys=True, indent=2))
        return EXIT_OK
    print(f"run: {summary['run_dir']}")
    if config:
        print(f"loss mode: {summary['loss_mode']}, ablations: {summary['ablations']}")
    print(f"config hash: {summary['config_hash']}")
    print(
        f"best epoch {summary['best_epoch']} of {summary['epochs_run']} "
        f"(early stop: {summary['stopped_early']})"
    )
    print(f"best valid ndcg@10: {summary['best_valid_ndcg10']}")
    for row in summary["test"] or []:
        print(
            f"test k={row['k']}: hr {row['hr']:.4f}, recall {row['recall']:.4f}, "
            f"ndcg {row['ndcg']:.4f}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pseudorank", description="Pseudo-ranking recommender engine"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="filter, split and index an interaction file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--min-core", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.add_argument("--delimiter", choices=("auto", "tab", "comma"), default="auto")
    p.add_argument("--atomic", action="store_true", help="typed-header interaction format")
    p.set_defaults(func=_cmd_prepare)

    p = sub.add_parser("train", help="train on a prepared data directory")
    p.add_argument("--config", required=True, help="JSON training config")
    p.add_argument("--data", required=True, help="prepared data directory")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="rank-all evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--ks", default="10,20")
    p.add_argument("--out", help="also write the metric rows to this JSON file")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("verify", help="run the mathematical verification checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strict-timing", action="store_true")
    p.add_argument("--skip-timing", action="store_true")
    p.add_argument("--out", help="write the reports to this JSON file")
    p.add_argument("--inject-failure", help=argparse.SUPPRESS)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("report", help="summarize a training output directory")
    p.add_argument("--run", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
