"""Next-item, long-horizon and diversity metrics over prediction records."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.special import digamma

from .events import EventSequence, window_bounds
from .inference import predict_sequences
from .matching import hungarian

# value reported when every delta is identical (all 1-NN distances at the tie floor)
DIFF_ENTROPY_FLOOR = math.log(2e-12)
MIN_ENTROPY_SAMPLES = 50


class MetricError(ValueError):
    pass


@dataclass
class MetricReport:
    mean_length: float
    label_entropy: float | None
    time_delta_diff_entropy: float | None
    next_item_accuracy: float
    next_item_mae: float
    otd: float
    t_map: float
    time_delta_entropy_degenerate: bool = False
    gt_label_entropy: float | None = None
    n_anchors: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- next item


def next_item_metrics(pred_times, pred_labels, true_times, true_labels) -> tuple[float, float]:
    pred_times = np.asarray(pred_times, dtype=np.float64)
    true_times = np.asarray(true_times, dtype=np.float64)
    if not len(true_times):
        raise MetricError("no anchors with a next event")
    acc = float(np.mean(np.asarray(pred_labels) == np.asarray(true_labels)))
    mae = float(np.mean(np.abs(pred_times - true_times)))
    return acc, mae


# ---------------------------------------------------------------------- OTD


def otd(pred, gt, c_del: float = 1.0) -> float:
    """Optimal partial matching distance between two (t, l) event lists.

    Matches require equal labels and cost ``min(|dt|, 2 c_del)``; each
    unmatched event on either side costs ``c_del``.
    """
    if not c_del > 0:
        raise ValueError("c_del must be positive")
    n, m = len(pred), len(gt)
    if n == 0 or m == 0:
        return c_del * (n + m)
    pt = np.array([float(e[0]) for e in pred])
    pl = np.array([int(e[1]) for e in pred])
    gt_t = np.array([float(e[0]) for e in gt])
    gl = np.array([int(e[1]) for e in gt])
    cap = 2.0 * c_del
    big = cap * (n + m + 1)
    size = n + m
    cost = np.zeros((size, size))
    pair = np.minimum(np.abs(pt[:, None] - gt_t[None, :]), cap)
    pair[pl[:, None] != gl[None, :]] = cap
    cost[:n, :m] = pair
    cost[:n, m:] = big
    cost[np.arange(n), m + np.arange(n)] = c_del
    cost[n:, :m] = big
    cost[n + np.arange(m), np.arange(m)] = c_del
    sigma = hungarian(cost)
    return float(cost[np.arange(size), sigma].sum())


def otd_brute_force(pred, gt, c_del: float = 1.0) -> float:
    """Enumerate every partial label-consistent matching."""
    cap = 2.0 * c_del
    pred = [(float(t), int(l)) for t, l, *_ in pred]
    gt = [(float(t), int(l)) for t, l, *_ in gt]

    def rec(i: int, used: frozenset) -> float:
        if i == len(pred):
            return c_del * (len(gt) - len(used))
        best = c_del + rec(i + 1, used)
        for j, (t, l) in enumerate(gt):
            if j not in used and l == pred[i][1]:
                best = min(best, min(abs(t - pred[i][0]), cap) + rec(i + 1, used | {j}))
        return best

    return float(rec(0, frozenset()))


# -------------------------------------------------------------------- T-mAP


def average_precision(hits: Sequence[bool], n_gt: int) -> float:
    if n_gt == 0:
        return 0.0
    hits = np.asarray(hits, dtype=bool)
    if not hits.any():
        return 0.0
    ranks = np.arange(1, len(hits) + 1)
    precision = np.cumsum(hits) / ranks
    return float(precision[hits].sum() / n_gt)


def t_map(predictions, ground_truth, delta: float) -> float:
    """Detection-style mean AP over labels present in the ground truth.

    ``predictions[a]`` is a list of (t, l, score) and ``ground_truth[a]`` a
    list of (t, l) for anchor window ``a``. Within each label, predictions
    are taken by descending score and each claims the nearest unclaimed
    ground-truth event of that label in its own window with ``|dt| <= delta``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    gt_by_label: dict[int, dict[int, list[float]]] = {}
    for a, events in enumerate(ground_truth):
        for e in events:
            gt_by_label.setdefault(int(e[1]), {}).setdefault(a, []).append(float(e[0]))
    if not gt_by_label:
        return 0.0
    preds_by_label: dict[int, list[tuple[float, int, float]]] = {}
    for a, events in enumerate(predictions):
        for t, l, score in events:
            preds_by_label.setdefault(int(l), []).append((float(score), a, float(t)))

    aps = []
    for label in sorted(gt_by_label):
        windows = gt_by_label[label]
        n_gt = sum(len(v) for v in windows.values())
        cands = preds_by_label.get(label, [])
        order = sorted(range(len(cands)), key=lambda i: -cands[i][0])
        claimed: dict[int, np.ndarray] = {a: np.zeros(len(v), dtype=bool) for a, v in windows.items()}
        hits = []
        for i in order:
            _, a, t = cands[i]
            times = windows.get(a)
            hit = False
            if times is not None:
                dist = np.abs(np.asarray(times) - t)
                dist[claimed[a]] = np.inf
                j = int(np.argmin(dist))
                if dist[j] <= delta:
                    claimed[a][j] = True
                    hit = True
            hits.append(hit)
        aps.append(average_precision(hits, n_gt))
    return float(np.mean(aps))


# ---------------------------------------------------------------- diversity


def label_entropy(labels) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    if not len(labels):
        raise MetricError("label entropy of an empty pool")
    _, counts = np.unique(labels, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum() + 0.0)


def kl_entropy(samples, return_flag: bool = False):
    """Kozachenko-Leonenko 1-NN differential entropy in one dimension (nats)."""
    x = np.sort(np.asarray(samples, dtype=np.float64).reshape(-1))
    n = len(x)
    if n < MIN_ENTROPY_SAMPLES:
        raise MetricError(f"need at least {MIN_ENTROPY_SAMPLES} samples, got {n}")
    if x[-1] == x[0]:
        return (DIFF_ENTROPY_FLOOR, True) if return_flag else DIFF_ENTROPY_FLOOR
    gaps = np.diff(x)
    d = np.minimum(np.concatenate([[np.inf], gaps]), np.concatenate([gaps, [np.inf]]))
    d = np.maximum(d, 1e-12)
    h = float(digamma(n) - digamma(1) + np.mean(np.log(2.0 * d)))
    return (h, False) if return_flag else h


def time_delta_diff_entropy(deltas) -> float:
    return kl_entropy(deltas)


# --------------------------------------------------------------- aggregate


def _window(events, anchor: float, horizon: float, cap: int | None = None):
    inside = [e for e in events if anchor < e[0] <= anchor + horizon]
    inside.sort(key=lambda e: e[0])
    return inside[:cap] if cap is not None else inside


def evaluate_predictions(records: Sequence[dict], sequences: Sequence[EventSequence], *,
                         horizon: float, k: int, c_del: float = 1.0, delta: float | None = None,
                         min_history: int = 1) -> MetricReport:
    """Score prediction records against the sequences they were made for."""
    delta = horizon / 10.0 if delta is None else delta
    by_key = {(r["id"], int(r["anchor_index"])): r for r in records}
    missing = []
    otds, lengths = [], []
    ranked_all, gt_all = [], []
    pred_labels, gt_labels, deltas = [], [], []
    nxt_pt, nxt_pl, nxt_tt, nxt_tl = [], [], [], []
    for seq in sequences:
        for n in range(min_history - 1, len(seq)):
            rec = by_key.get((seq.id, n))
            if rec is None:
                missing.append(f"{seq.id}:{n}")
                continue
            anchor = float(seq.times[n])
            lo, hi = window_bounds(seq.times, n, horizon)
            hi = min(hi, lo + k)
            gt = list(zip(seq.times[lo:hi].tolist(), seq.labels[lo:hi].tolist()))
            pred = _window(rec["events"], anchor, horizon, k)
            otds.append(otd(pred, gt, c_del))
            lengths.append(len(pred))
            ranked_all.append(_window(rec["ranked"], anchor, horizon))
            gt_all.append(gt)
            pred_labels.extend(int(e[1]) for e in pred)
            gt_labels.extend(l for _, l in gt)
            if pred:
                deltas.extend(np.diff([anchor] + [e[0] for e in pred]).tolist())
            if n + 1 < len(seq):
                nxt_pt.append(rec["next"][0])
                nxt_pl.append(rec["next"][1])
                nxt_tt.append(float(seq.times[n + 1]))
                nxt_tl.append(int(seq.labels[n + 1]))
    if missing:
        raise MetricError(f"missing predictions for anchors: {', '.join(missing[:20])}"
                          + (" ..." if len(missing) > 20 else ""))
    if not otds:
        raise MetricError("no evaluation anchors")
    acc, mae = next_item_metrics(nxt_pt, nxt_pl, nxt_tt, nxt_tl)
    if len(deltas) >= MIN_ENTROPY_SAMPLES:
        td_entropy, degenerate = kl_entropy(deltas, return_flag=True)
    else:
        td_entropy, degenerate = None, True
    return MetricReport(
        mean_length=float(np.mean(lengths)),
        label_entropy=label_entropy(pred_labels) if pred_labels else None,
        time_delta_diff_entropy=td_entropy,
        next_item_accuracy=acc,
        next_item_mae=mae,
        otd=float(np.mean(otds)),
        t_map=t_map(ranked_all, gt_all, delta),
        time_delta_entropy_degenerate=degenerate,
        gt_label_entropy=label_entropy(gt_labels) if gt_labels else None,
        n_anchors=len(otds),
    )


def evaluate_run(model, sequences, *, thresholds=None, horizon=None, c_del=1.0, delta=None,
                 min_history=1, max_steps=None) -> MetricReport:
    horizon = model.config.H if horizon is None else horizon
    records = predict_sequences(model, sequences, thresholds, min_history, max_steps)
    return evaluate_predictions(records, sequences, horizon=horizon, k=model.config.K,
                                c_del=c_del, delta=delta, min_history=min_history)
