"""Forecasting from trained models and the prediction dump format."""

from __future__ import annotations

import json
from typing import NamedTuple, Sequence

import numpy as np

from .calibration import Calibrator, CalibrationError
from .events import EventSequence
from .grad import Tensor
from .model import PredictionSet, SequenceModel


class ForecastEvent(NamedTuple):
    t: float
    l: int
    score: float


def _sorted_events(times, labels, scores, slots) -> list[ForecastEvent]:
    order = sorted(slots, key=lambda j: (times[j], j))
    return [ForecastEvent(float(times[j]), int(labels[j]), float(scores[j])) for j in order]


def forecast(preds: PredictionSet, anchor: float, thresholds) -> list[ForecastEvent]:
    """Keep slots with presence >= threshold, sort by time (ties by slot index)."""
    if thresholds is None:
        raise CalibrationError("calibrate before inference")
    if isinstance(thresholds, Calibrator):
        thresholds = thresholds.thresholds()
    o = preds.presence
    keep = [j for j in range(len(o)) if o[j] >= thresholds[j]]
    return _sorted_events(anchor + preds.times, preds.label_probs.argmax(axis=-1), o, keep)


def forecast_unfiltered_ranked(preds: PredictionSet, anchor: float) -> list[ForecastEvent]:
    o = preds.presence
    return _sorted_events(anchor + preds.times, preds.label_probs.argmax(axis=-1), o, range(len(o)))


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def rollout_batch(model: SequenceModel, h0: np.ndarray, anchors: np.ndarray,
                  horizon: float, max_steps: int):
    """Autoregressive decoding from hidden states ``h0`` (N, hidden).

    Returns (first-step predictions, per-anchor event lists). Each step feeds
    back the argmax label and the point-estimate gap; an anchor stops once its
    cumulative offset exceeds ``horizon`` or after ``max_steps`` events.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    p = {k: v.value for k, v in model.params.items()}
    scale = model.config.time_scale
    n = len(anchors)
    h = h0
    offset = np.zeros(n)
    active = np.ones(n, dtype=bool)
    events: list[list[ForecastEvent]] = [[] for _ in range(n)]
    first = None
    for step in range(max_steps):
        out = h @ p["head.w"] + p["head.b"]
        raw = out[:, 0]
        gap = scale * (np.maximum(raw, 0.0) + np.log1p(np.exp(-np.abs(raw))))
        probs = _softmax(out[:, 1:])
        label = probs.argmax(axis=1)
        score = probs.max(axis=1)
        if first is None:
            first = (anchors + gap, label.copy(), score.copy())
        offset = offset + gap
        active &= offset <= horizon
        for a in np.nonzero(active)[0]:
            events[a].append(ForecastEvent(float(anchors[a] + offset[a]), int(label[a]), float(score[a])))
        if not active.any():
            break
        h = model.gru_step_np(label, np.log1p(gap), h)
    return first, events


def autoregressive_rollout(model: SequenceModel, prefix: EventSequence, horizon: float,
                           max_steps: int) -> list[ForecastEvent]:
    h = model.encode(prefix).value[-1:]
    _, events = rollout_batch(model, h, np.array([prefix.times[-1]]), horizon, max_steps)
    return events[0]


# ------------------------------------------------------------ dataset level


def _anchor_indices(seq: EventSequence, min_history: int) -> np.ndarray:
    return np.arange(min_history - 1, len(seq))


def _events_json(events: Sequence[ForecastEvent]) -> list:
    return [[float(e.t), int(e.l), float(e.score)] for e in events]


def predict_sequences(model: SequenceModel, sequences: Sequence[EventSequence],
                      thresholds: np.ndarray | None = None, min_history: int = 1,
                      max_steps: int | None = None, batch_size: int = 64) -> list[dict]:
    """Prediction records for every anchor of every sequence.

    Each record has ``id``, ``anchor_index``, ``events`` (the method's
    forecast), ``ranked`` (score-ranked candidates for T-mAP) and ``next``
    (single next-event prediction ``[t, l]``).
    """
    cfg = model.config
    max_steps = max_steps or cfg.K
    records = []
    for start in range(0, len(sequences), batch_size):
        batch = [s for s in sequences[start:start + batch_size] if len(s)]
        if not batch:
            continue
        hidden = model.encode_batch(batch).value
        offsets = np.concatenate([[0], np.cumsum([len(s) for s in batch])])
        for j, seq in enumerate(batch):
            idx = _anchor_indices(seq, min_history)
            if not len(idx):
                continue
            h = hidden[offsets[j] + idx]
            anchors = seq.times[idx]
            records.extend(_predict_anchors(model, seq.id, idx, anchors, h, thresholds, max_steps))
    return records


def _predict_anchors(model, seq_id, idx, anchors, h, thresholds, max_steps):
    cfg = model.config
    out = []
    if model.method == "detpp":
        if thresholds is None:
            raise CalibrationError("calibrate before inference")
        preds = model.detpp_head(Tensor(h))
        for a, n in enumerate(idx):
            row = preds.row(a)
            kept = forecast(row, anchors[a], thresholds)
            ranked = forecast_unfiltered_ranked(row, anchors[a])
            if kept:
                nxt = kept[0]
            else:
                j = int(np.argmax(row.presence))
                nxt = ForecastEvent(anchors[a] + row.times[j], int(row.label_probs[j].argmax()), 0.0)
            out.append(_record(seq_id, n, kept, ranked, nxt))
    elif model.method == "mae_ce":
        (t1, l1, _), events = rollout_batch(model, h, anchors, cfg.H, max_steps)
        for a, n in enumerate(idx):
            nxt = ForecastEvent(float(t1[a]), int(l1[a]), 0.0)
            out.append(_record(seq_id, n, events[a], events[a], nxt))
    else:
        t_shift, logits = model.next_k_head(Tensor(h))
        probs = _softmax(logits.value)
        labels = probs.argmax(axis=-1)
        scores = probs.max(axis=-1)
        for a, n in enumerate(idx):
            times = anchors[a] + t_shift.value[a]
            # positional slots are not guaranteed monotone; emit in time order
            events = _sorted_events(times, labels[a], scores[a], range(cfg.K))
            nxt = ForecastEvent(float(times[0]), int(labels[a, 0]), 0.0)
            out.append(_record(seq_id, n, events, events, nxt))
    return out


def _record(seq_id, n, events, ranked, nxt) -> dict:
    return {
        "id": seq_id,
        "anchor_index": int(n),
        "events": _events_json(events),
        "ranked": _events_json(ranked),
        "next": [float(nxt.t), int(nxt.l)],
    }


def save_predictions(records: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, separators=(",", ":")) + "\n")


def load_predictions(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
