"""Command line: generate, train, predict, evaluate, reproduce.

Exit codes: 0 success, 1 usage, 2 data validation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .calibration import CalibrationError
from .events import DataValidationError, load_sequences, save_sequences
from .experiment import BenchmarkConfig, benchmark_process, format_table, report_json, run_benchmark, with_overrides
from .inference import load_predictions, predict_sequences, save_predictions
from .metrics import MetricError, evaluate_predictions
from .synth import HawkesSpec, generate_hawkes, generate_markov_bursts, split_dataset
from .train import (
    TrainConfig,
    TrainingDivergence,
    load_trained,
    load_training_state,
    save_training_checkpoint,
    train,
    write_log_csv,
)

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
PATH_KEYS = ("train", "val", "checkpoint", "log")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ config


def _coerce(name: str, raw: str, kind):
    kind = {"int": int, "float": float, "str": str, "bool": bool}.get(kind, kind)
    if kind is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    return kind(raw)


def parse_config(text: str, source: str = "<config>") -> dict:
    """Flat ``key = value`` lines, ``#`` comments. Unknown keys are errors."""
    fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key in PATH_KEYS:
            out[key] = raw
        elif key in fields:
            try:
                out[key] = _coerce(key, raw, fields[key])
            except ValueError as exc:
                raise UsageError(f"{source}:{lineno}: bad value for '{key}': {exc}") from None
        else:
            raise UsageError(f"{source}:{lineno}: unknown key '{key}'")
    return out


def _train_config(values: dict) -> TrainConfig:
    kw = {k: v for k, v in values.items() if k not in PATH_KEYS}
    try:
        return TrainConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    if args.process == "markov":
        seqs = generate_markov_bursts(args.L, args.t_max, args.seed, args.n_sequences)
    elif args.process == "benchmark":
        seqs = generate_markov_bursts(args.L, args.t_max, args.seed, args.n_sequences,
                                      *benchmark_process(args.L))
    else:
        mu = np.full(args.L, args.mu) if len(args.mu) == 1 else np.array(args.mu)
        alpha = np.full((args.L, args.L), args.alpha[0]) if len(args.alpha) == 1 \
            else np.array(args.alpha).reshape(args.L, args.L)
        try:
            spec = HawkesSpec(args.L, mu, alpha, args.beta, args.t_max, args.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        seqs = generate_hawkes(spec, args.n_sequences)
    try:
        parts = split_dataset(seqs, args.fractions, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for name, part in zip(("train", "val", "test"), parts):
        save_sequences(part, out / f"{name}.jsonl")
        summary[name] = len(part)
    labels = np.concatenate([s.labels for s in seqs]) if seqs else np.zeros(0, dtype=int)
    summary["mean_length"] = float(np.mean([len(s) for s in seqs]))
    summary["label_marginals"] = (np.bincount(labels, minlength=args.L) / max(len(labels), 1)).tolist()
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    values = {}
    if args.resume:
        ckpt_cfg, state = load_training_state(args.resume)
        values.update(dataclasses.asdict(ckpt_cfg))
        values.update(state["paths"])
    if args.config:
        values.update(parse_config(Path(args.config).read_text(), args.config))
    for item in args.set or []:
        values.update(parse_config(item, "--set"))
    for key in PATH_KEYS:
        if getattr(args, key, None):
            values[key] = getattr(args, key)
    missing = [k for k in ("train", "checkpoint") if k not in values]
    if missing:
        raise UsageError(f"missing required setting(s): {', '.join(missing)}")
    cfg = _train_config(values)
    train_set = load_sequences(values["train"], cfg.L)
    val_set = load_sequences(values["val"], cfg.L) if values.get("val") else []
    result = train(cfg, train_set, val_set, resume=state if args.resume else None)
    paths = {k: str(values[k]) for k in ("train", "val") if values.get(k)}
    save_training_checkpoint(values["checkpoint"], result, cfg, paths)
    log_path = values.get("log") or str(values["checkpoint"]) + ".log.csv"
    write_log_csv(result.log, log_path)
    print(json.dumps({"best_epoch": result.best_epoch, "epochs_run": result.log[-1]["epoch"],
                      "checkpoint": str(values["checkpoint"]), "log": log_path}))
    return 0


def cmd_predict(args) -> int:
    model, calibrator, _ = load_trained(args.checkpoint)
    sequences = load_sequences(args.data, model.config.L)
    thresholds = None
    if model.method == "detpp":
        if calibrator is None or not calibrator.ready:
            raise CalibrationError("checkpoint has no calibration; calibrate before inference")
        thresholds = calibrator.thresholds()
    records = predict_sequences(model, sequences, thresholds, args.min_history, args.max_steps)
    save_predictions(records, args.out)
    print(json.dumps({"anchors": len(records), "out": args.out}))
    return 0


def cmd_evaluate(args) -> int:
    horizon, k = args.horizon, args.k
    if args.checkpoint:
        model, _, _ = load_trained(args.checkpoint)
        horizon = horizon or model.config.H
        k = k or model.config.K
    if horizon is None or k is None:
        raise UsageError("evaluate needs --horizon and --k (or --checkpoint)")
    sequences = load_sequences(args.data)
    records = load_predictions(args.predictions)
    report = evaluate_predictions(records, sequences, horizon=horizon, k=k, c_del=args.c_del,
                                  delta=args.delta, min_history=args.min_history)
    payload = dict(report.as_dict())
    payload["config"] = {"horizon": horizon, "k": k, "c_del": args.c_del,
                         "delta": args.delta if args.delta is not None else horizon / 10.0,
                         "min_history": args.min_history}
    payload["seed"] = args.seed
    text = json.dumps(payload, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_reproduce(args) -> int:
    cfg = with_overrides(BenchmarkConfig(), epochs=args.epochs, n_train=args.n_train)
    runs, _ = run_benchmark(args.seed, cfg)
    text = report_json(runs, args.seed, cfg)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(format_table(runs))
    print(text)
    return 0


# ------------------------------------------------------------------ parser


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="detpp", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=1, help="cap on BLAS worker threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    # the same flags are accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write synthetic train/val/test JSONL files")
    g.add_argument("--process", choices=("markov", "benchmark", "hawkes"), default="markov")
    g.add_argument("--L", type=int, default=5)
    g.add_argument("--t-max", type=float, default=40.0)
    g.add_argument("--n-sequences", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--fractions", type=_floats, default=[0.8, 0.1, 0.1])
    g.add_argument("--mu", type=_floats, default=[0.5])
    g.add_argument("--alpha", type=_floats, default=[0.0])
    g.add_argument("--beta", type=float, default=1.0)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="train detpp, mae_ce or mae_ce_k")
    t.add_argument("--config")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--train")
    t.add_argument("--val")
    t.add_argument("--checkpoint")
    t.add_argument("--log")
    t.add_argument("--resume", metavar="CHECKPOINT")
    t.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="dump forecasts for every anchor")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-history", type=int, default=1)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", parents=[common], help="score a prediction dump")
    e.add_argument("--predictions", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--horizon", type=float)
    e.add_argument("--k", type=int)
    e.add_argument("--c-del", type=float, default=1.0)
    e.add_argument("--delta", type=float)
    e.add_argument("--min-history", type=int, default=1)
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("reproduce", parents=[common], help="train and compare all three methods on the synthetic benchmark")
    r.add_argument("--seed", type=int, default=7)
    r.add_argument("--epochs", type=int)
    r.add_argument("--n-train", type=int)
    r.add_argument("--out")
    r.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataValidationError, MetricError, CalibrationError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergence, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
