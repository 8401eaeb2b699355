"""Training driver shared by DeTPP and the MAE-CE / MAE-CE-K baselines."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import grad as G
from .calibration import Calibrator
from .events import EventSequence, extract_horizon_targets
from .matching import batch_matching_loss, next_event_loss, positional_loss
from .model import METHODS, EncoderConfig, SequenceModel, load_model, read_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


class TrainingDivergence(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    method: str = "detpp"
    L: int = 5
    K: int = 32
    H: float = 10.0
    embed_dim: int = 16
    hidden_dim: int = 64
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    grad_clip_norm: float = 1.0
    seed: int = 0
    min_history: int = 1
    calibration_warmup_epochs: int = 1
    calibration_capacity: int = 1024
    patience: int = 5
    # "epoch": statistics restart every epoch so they track current parameters
    calibration_window: str = "cumulative"
    # re-collect statistics with the final parameters in one pass after training
    calibration_refresh: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if min(self.epochs, self.batch_size, self.K, self.L, self.min_history) < 1:
            raise ValueError("epochs, batch_size, K, L, min_history must be >= 1")
        if self.calibration_window not in ("epoch", "cumulative"):
            raise ValueError("calibration_window must be 'epoch' or 'cumulative'")
        if self.learning_rate < 0 or self.grad_clip_norm <= 0 or not self.H > 0:
            raise ValueError("learning_rate >= 0, grad_clip_norm > 0 and H > 0 required")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.L, self.embed_dim, self.hidden_dim, self.K, self.H)


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: Sequence[G.Parameter], state: AdamState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p in params:
        g = p.grad
        if g.shape != p.shape:
            raise G.ShapeError(f"adam: gradient shape {g.shape} != parameter {p.name} {p.shape}")
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_gradients(params: Sequence[G.Parameter], max_norm: float) -> float:
    """Scale all gradients by ``min(1, max_norm / global_norm)``; returns the scale."""
    norm = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))
    scale = 1.0 if norm <= max_norm else max_norm / norm
    if scale < 1.0:
        for p in params:
            p.grad = p.grad * scale
    return scale


# --------------------------------------------------------------- batching


class _Anchors:
    """Per-sequence training targets, precomputed once."""

    def __init__(self, seq: EventSequence, cfg: TrainConfig):
        n0 = cfg.min_history - 1
        self.length = len(seq)
        if cfg.method == "detpp":
            pairs = extract_horizon_targets(seq, cfg.H, cfg.K, cfg.min_history)
            self.positions = np.array([n for n, _ in pairs], dtype=np.int64)
            self.targets = [t for _, t in pairs]
        elif cfg.method == "mae_ce":
            self.positions = np.arange(n0, len(seq) - 1)
            self.dts = np.diff(seq.times)[self.positions] if len(self.positions) else np.zeros(0)
            self.labels = seq.labels[self.positions + 1]
        else:
            self.positions = np.arange(n0, len(seq))
            n = len(self.positions)
            self.dts = np.zeros((n, cfg.K))
            self.labels = np.zeros((n, cfg.K), dtype=np.int64)
            self.sizes = np.zeros(n, dtype=np.int64)
            for a, pos in enumerate(self.positions):
                fut = slice(pos + 1, min(pos + 1 + cfg.K, len(seq)))
                size = fut.stop - fut.start
                self.dts[a, :size] = seq.times[fut] - seq.times[pos]
                self.labels[a, :size] = seq.labels[fut]
                self.sizes[a] = size


def _batch_loss(model: SequenceModel, cfg: TrainConfig, seqs, anchors: list[_Anchors]):
    """Summed loss over the batch's anchors, anchor count, and DeTPP match info."""
    hidden = model.encode_batch(seqs)
    offsets = np.concatenate([[0], np.cumsum([a.length for a in anchors])])
    rows = np.concatenate([offsets[i] + a.positions for i, a in enumerate(anchors)])
    n = len(rows)
    if n == 0:
        return None, 0, None
    h = G.index_select(hidden, rows)
    if cfg.method == "detpp":
        preds = model.detpp_head(h)
        targets = [t for a in anchors for t in a.targets]
        loss, matched, _ = batch_matching_loss(preds, targets)
        return loss, n, (preds.presence, matched)
    if cfg.method == "mae_ce":
        t_shift, logits = model.next_event_head(h)
        dts = np.concatenate([a.dts for a in anchors])
        labels = np.concatenate([a.labels for a in anchors])
        return next_event_loss(t_shift, logits, dts, labels), n, None
    t_shift, logits = model.next_k_head(h)
    dts = np.concatenate([a.dts for a in anchors])
    labels = np.concatenate([a.labels for a in anchors])
    sizes = np.concatenate([a.sizes for a in anchors])
    return positional_loss(t_shift, logits, dts, labels, sizes), n, None


def dataset_loss(model: SequenceModel, cfg: TrainConfig, seqs, anchors=None, batch_size=64) -> float:
    """Mean per-anchor loss without recording a tape."""
    seqs = [s for s in seqs if len(s)]
    if anchors is None:
        anchors = [_Anchors(s, cfg) for s in seqs]
    total, count = 0.0, 0
    for i in range(0, len(seqs), batch_size):
        loss, n, _ = _batch_loss(model, cfg, seqs[i:i + batch_size], anchors[i:i + batch_size])
        if n:
            total += loss.item()
            count += n
    return total / count if count else math.nan


def mean_target_length(seqs, cfg: TrainConfig) -> float:
    sizes = [len(t) for s in seqs for _, t in extract_horizon_targets(s, cfg.H, cfg.K, cfg.min_history)]
    return float(np.mean(sizes)) if sizes else 0.0


# ---------------------------------------------------------------- driver


@dataclass
class TrainResult:
    model: SequenceModel  # holds the best-validation parameters
    calibrator: Calibrator | None
    log: list[dict]
    best_epoch: int
    state: dict = field(default_factory=dict)

    @property
    def thresholds(self) -> np.ndarray | None:
        return self.calibrator.thresholds() if self.calibrator is not None and self.calibrator.ready else None


def train(cfg: TrainConfig, train_set: Sequence[EventSequence], val_set: Sequence[EventSequence],
          resume: dict | None = None, checkpoint_path=None) -> TrainResult:
    """Adam on the method's loss; keeps the best-validation parameters.

    ``resume`` is the ``state`` of an earlier :class:`TrainResult` (or a
    loaded checkpoint) and continues that run as if it had not stopped.
    """
    train_set = [s for s in train_set if len(s)]
    val_set = [s for s in val_set if len(s)]
    if not train_set:
        raise ValueError("empty training set")
    model = SequenceModel(cfg.encoder_config(), cfg.method, cfg.seed)
    model.init_presence_bias(mean_target_length(train_set, cfg) if cfg.method == "detpp" else 0.0)
    train_anchors = [_Anchors(s, cfg) for s in train_set]
    val_anchors = [_Anchors(s, cfg) for s in val_set]
    params = model.parameters()

    calibrator = Calibrator(cfg.K, cfg.calibration_capacity, cfg.seed) if cfg.method == "detpp" else None
    adam = AdamState()
    rows: list[dict] = []
    best = {"val": math.inf, "epoch": 0, "arrays": model.state_arrays(),
            "calibration": calibrator.to_bytes() if calibrator else b""}
    bad_epochs = 0
    start_epoch = 1
    if resume is not None:
        model.load_arrays(resume["last"])
        adam = AdamState(dict(resume["adam_m"]), dict(resume["adam_v"]), resume["adam_step"])
        if calibrator is not None:
            calibrator = Calibrator.from_bytes(resume["calibrator"])
        rows = [dict(r) for r in resume["log"]]
        best = dict(resume["best"])
        bad_epochs = resume["bad_epochs"]
        start_epoch = resume["epoch"] + 1
    else:
        t0 = time.perf_counter()
        rows.append({
            "epoch": 0,
            "train_loss": dataset_loss(model, cfg, train_set, train_anchors),
            "val_loss": dataset_loss(model, cfg, val_set, val_anchors) if val_set else math.nan,
            "wall_seconds": time.perf_counter() - t0,
        })

    epoch = start_epoch - 1
    for epoch in range(start_epoch, cfg.epochs + 1):
        if bad_epochs >= cfg.patience:
            break
        t0 = time.perf_counter()
        order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch])).permutation(len(train_set))
        collect = calibrator is not None and epoch > cfg.calibration_warmup_epochs
        if collect and cfg.calibration_window == "epoch":
            calibrator.reset()
        total, count = 0.0, 0
        for b, i in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[i:i + cfg.batch_size]
            model.zero_grad()
            try:
                with G.Tape() as tape:
                    loss, n, info = _batch_loss(model, cfg, [train_set[j] for j in idx],
                                                [train_anchors[j] for j in idx])
                    if not n:
                        continue
                    mean_loss = G.scale(loss, 1.0 / n)
                    tape.backward(mean_loss)
            except FloatingPointError as exc:
                raise TrainingDivergence(f"epoch {epoch}, batch {b}: {exc}") from exc
            total += loss.item()
            count += n
            clip_gradients(params, cfg.grad_clip_norm)
            if cfg.learning_rate > 0:
                adam_step(params, adam, cfg.learning_rate)
            if collect:
                presence, matched = info
                calibrator.observe_batch(presence, matched)
        val_loss = dataset_loss(model, cfg, val_set, val_anchors) if val_set else total / count
        rows.append({"epoch": epoch, "train_loss": total / count, "val_loss": val_loss,
                     "wall_seconds": time.perf_counter() - t0})
        log.info("epoch %d train %.5f val %.5f", epoch, total / count, val_loss)
        if val_loss < best["val"]:
            best = {"val": val_loss, "epoch": epoch, "arrays": model.state_arrays(),
                    "calibration": calibrator.to_bytes() if calibrator else b""}
            bad_epochs = 0
        else:
            bad_epochs += 1

    state = {
        "last": model.state_arrays(),
        "adam_m": {k: v.copy() for k, v in adam.m.items()},
        "adam_v": {k: v.copy() for k, v in adam.v.items()},
        "adam_step": adam.step,
        "calibrator": calibrator.to_bytes() if calibrator else b"",
        "log": rows,
        "best": best,
        "bad_epochs": bad_epochs,
        "epoch": epoch,
    }
    model.load_arrays(best["arrays"])
    best_cal = Calibrator.from_bytes(best["calibration"]) if calibrator is not None else None
    if best_cal is not None and cfg.calibration_refresh:
        best_cal = recalibrate(model, cfg, train_set, train_anchors)
        best = dict(best, calibration=best_cal.to_bytes())
        state["best"] = best
    result = TrainResult(model, best_cal, rows, best["epoch"], state)
    if checkpoint_path is not None:
        save_training_checkpoint(checkpoint_path, result, cfg)
    return result


def recalibrate(model: SequenceModel, cfg: TrainConfig, seqs, anchors=None) -> Calibrator:
    """Fresh calibration statistics from one pass over ``seqs`` with fixed parameters."""
    if anchors is None:
        anchors = [_Anchors(s, cfg) for s in seqs]
    cal = Calibrator(cfg.K, cfg.calibration_capacity, cfg.seed)
    for i in range(0, len(seqs), cfg.batch_size):
        _, n, info = _batch_loss(model, cfg, seqs[i:i + cfg.batch_size], anchors[i:i + cfg.batch_size])
        if n:
            cal.observe_batch(*info)
    return cal


# ------------------------------------------------------------ persistence


def save_training_checkpoint(path, result: TrainResult, cfg: TrainConfig, paths: dict | None = None) -> None:
    """``paths`` (dataset locations) are stored so a resumed run can find its data."""
    st = result.state
    arrays = dict(result.model.state_arrays())
    for prefix, group in (("last/", st["last"]), ("adam_m/", st["adam_m"]), ("adam_v/", st["adam_v"])):
        arrays.update({prefix + k: v for k, v in group.items()})
    sections = {"calibration": st["best"]["calibration"], "live_calibration": st["calibrator"]}
    meta = {
        "train_config": asdict(cfg),
        "adam_step": st["adam_step"],
        "epoch": st["epoch"],
        "bad_epochs": st["bad_epochs"],
        "best_val": st["best"]["val"],
        "best_epoch": st["best"]["epoch"],
        "log": st["log"],
        "paths": dict(paths or {}),
    }
    save_checkpoint(path, result.model, arrays, sections, meta)


def load_training_state(path) -> tuple[TrainConfig, dict]:
    header, arrays, sections = read_checkpoint(path)
    meta = header["meta"]
    cfg = TrainConfig(**meta["train_config"])

    def group(prefix):
        return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

    names = [k for k in arrays if "/" not in k]
    state = {
        "last": group("last/"),
        "adam_m": group("adam_m/"),
        "adam_v": group("adam_v/"),
        "adam_step": meta["adam_step"],
        "calibrator": sections.get("live_calibration", b""),
        "log": meta["log"],
        "best": {"val": meta["best_val"], "epoch": meta["best_epoch"],
                 "arrays": {k: arrays[k] for k in names},
                 "calibration": sections.get("calibration", b"")},
        "bad_epochs": meta["bad_epochs"],
        "epoch": meta["epoch"],
        "paths": meta.get("paths", {}),
    }
    return cfg, state


def load_trained(path) -> tuple[SequenceModel, Calibrator | None, dict]:
    model, _, sections, header = load_model(path)
    cal = sections.get("calibration", b"")
    calibrator = Calibrator.from_bytes(cal) if cal else None
    return model, calibrator, header


def write_log_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "wall_seconds"])
        writer.writeheader()
        for r in rows:
            writer.writerow({k: repr(float(r[k])) if k != "epoch" else r[k] for k in writer.fieldnames})
