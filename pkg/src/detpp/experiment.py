"""Synthetic three-way comparison: DeTPP against MAE-CE and MAE-CE-K."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .inference import predict_sequences
from .metrics import MetricReport, evaluate_predictions
from .model import METHODS
from .synth import generate_markov_bursts, split_dataset
from .train import TrainConfig, TrainResult, train

COLUMNS = ("mean_length", "label_entropy", "time_delta_diff_entropy",
           "next_item_accuracy", "next_item_mae", "otd", "t_map")


@dataclass(frozen=True)
class BenchmarkConfig:
    L: int = 5
    t_max: float = 40.0
    n_train: int = 500
    n_val: int = 100
    n_test: int = 100
    K: int = 16
    H: float = 8.0
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 3e-3
    hidden_dim: int = 32
    embed_dim: int = 16
    c_del: float = 1.0
    delta: float | None = None

    def train_config(self, method: str, seed: int) -> TrainConfig:
        return TrainConfig(method=method, L=self.L, K=self.K, H=self.H, embed_dim=self.embed_dim,
                           hidden_dim=self.hidden_dim, epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, seed=seed)


def benchmark_process(L: int, hub: float = 0.4, stay: float = 0.3):
    """Bursty chain around a frequent hub label 0.

    Every label moves to the hub with probability ``hub``; labels other than
    the hub repeat with probability ``stay``. The hub is therefore the modal
    successor everywhere, which is what drives argmax decoding to collapse.
    Gap rates: 1 for the hub, log-spaced 0.6..4 for the rest.
    """
    if L < 3:
        raise ValueError("the hub process needs L >= 3")
    rest = (1.0 - hub - stay) / (L - 2)
    trans = np.full((L, L), rest)
    trans[:, 0] = hub
    trans[np.arange(1, L), np.arange(1, L)] = stay
    trans[0, 1:] = (1.0 - hub) / (L - 1)
    rates = np.concatenate([[1.0], np.geomspace(0.6, 4.0, L - 1)])
    return trans, rates


def benchmark_data(cfg: BenchmarkConfig, seed: int):
    trans, rates = benchmark_process(cfg.L)
    n = cfg.n_train + cfg.n_val + cfg.n_test
    seqs = generate_markov_bursts(cfg.L, cfg.t_max, seed, n, trans, rates)
    return split_dataset(seqs, (cfg.n_train / n, cfg.n_val / n, cfg.n_test / n), seed)


@dataclass
class MethodRun:
    result: TrainResult
    records: list
    report: MetricReport


def run_benchmark(seed: int, cfg: BenchmarkConfig = BenchmarkConfig(),
                  methods=METHODS) -> tuple[dict[str, MethodRun], tuple]:
    train_set, val_set, test_set = benchmark_data(cfg, seed)
    runs = {}
    for method in methods:
        result = train(cfg.train_config(method, seed), train_set, val_set)
        records = predict_sequences(result.model, test_set, result.thresholds)
        report = evaluate_predictions(records, test_set, horizon=cfg.H, k=cfg.K,
                                      c_del=cfg.c_del, delta=cfg.delta)
        runs[method] = MethodRun(result, records, report)
    return runs, (train_set, val_set, test_set)


def report_json(runs: dict[str, MethodRun], seed: int, cfg: BenchmarkConfig) -> str:
    payload = {
        "seed": seed,
        "config": asdict(cfg),
        "methods": {m: r.report.as_dict() for m, r in runs.items()},
    }
    return json.dumps(payload, sort_keys=True, indent=2)


def format_table(runs: dict[str, MethodRun]) -> str:
    header = ["method"] + list(COLUMNS)
    lines = [" | ".join(f"{h:>12}" for h in header)]
    for method, run in runs.items():
        d = run.report.as_dict()
        cells = [f"{method:>12}"]
        for c in COLUMNS:
            v = d[c]
            cells.append(f"{'n/a':>12}" if v is None else f"{v:12.4f}")
        lines.append(" | ".join(cells))
    return "\n".join(lines)


def with_overrides(cfg: BenchmarkConfig, **kw) -> BenchmarkConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
