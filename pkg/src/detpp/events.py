"""Event sequences, JSONL ingestion and horizon-target extraction."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np


class DataValidationError(ValueError):
    pass


class Event(NamedTuple):
    t: float
    l: int


@dataclass(frozen=True)
class EventSequence:
    """A strictly time-ordered list of events.

    Stored as two read-only arrays; ``events`` materialises :class:`Event`
    tuples on demand.
    """

    id: str
    times: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if times.shape != labels.shape:
            raise DataValidationError(f"sequence {self.id!r}: times/labels length mismatch")
        if not np.all(np.isfinite(times)):
            raise DataValidationError(f"sequence {self.id!r}: non-finite timestamp")
        if np.any(np.diff(times) <= 0):
            raise DataValidationError(f"sequence {self.id!r}: timestamps not strictly increasing")
        if np.any(labels < 0):
            raise DataValidationError(f"sequence {self.id!r}: negative label")
        times.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_events(cls, id: str, events: Iterable[tuple[float, int]]) -> "EventSequence":
        events = list(events)
        times = [float(t) for t, _ in events]
        labels = [int(l) for _, l in events]
        return cls(id, np.array(times, dtype=np.float64), np.array(labels, dtype=np.int64))

    @property
    def events(self) -> list[Event]:
        return [Event(float(t), int(l)) for t, l in zip(self.times, self.labels)]

    def __len__(self) -> int:
        return len(self.times)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EventSequence)
            and self.id == other.id
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.labels, other.labels)
        )

    def prefix(self, n: int) -> "EventSequence":
        return EventSequence(self.id, self.times[:n], self.labels[:n])


@dataclass(frozen=True)
class HorizonTarget:
    """Ground truth in ``(anchor, anchor + horizon]``, at most K earliest events."""

    anchor: float
    horizon: float
    times: np.ndarray
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def events(self) -> list[Event]:
        return [Event(float(t), int(l)) for t, l in zip(self.times, self.labels)]

    def __len__(self) -> int:
        return len(self.times)


def _format_time(t: float) -> str:
    return format(t, ".9g")


def validate_labels(sequences: Iterable[EventSequence], num_labels: int) -> None:
    for seq in sequences:
        if len(seq) and int(seq.labels.max()) >= num_labels:
            raise DataValidationError(
                f"sequence {seq.id!r}: label {int(seq.labels.max())} >= L={num_labels}"
            )


def load_sequences(path: str | os.PathLike, num_labels: int | None = None) -> list[EventSequence]:
    """Read the JSONL dataset format, one ``{"id", "events": [[t, l], ...]}`` per line."""
    sequences = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                seq_id = str(record["id"])
                events = [(float(t), int(l)) for t, l in record["events"]]
            except (ValueError, KeyError, TypeError) as exc:
                raise DataValidationError(f"{path}:{lineno}: malformed record ({exc})") from exc
            sequences.append(EventSequence.from_events(seq_id, events))
    if num_labels is not None:
        validate_labels(sequences, num_labels)
    return sequences


def save_sequences(sequences: Iterable[EventSequence], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            events = ",".join(
                f"[{_format_time(float(t))},{int(l)}]" for t, l in zip(seq.times, seq.labels)
            )
            fh.write(f'{{"id":{json.dumps(seq.id)},"events":[{events}]}}\n')


def window_bounds(times: np.ndarray, n: int, horizon: float) -> tuple[int, int]:
    """Index range ``[lo, hi)`` of events in ``(times[n], times[n] + horizon]``."""
    anchor = times[n]
    hi = int(np.searchsorted(times, anchor + horizon, side="right"))
    return n + 1, max(hi, n + 1)


def extract_horizon_targets(
    seq: EventSequence, horizon: float, k: int, min_history: int = 1
) -> list[tuple[int, HorizonTarget]]:
    """One target per anchor index ``n >= min_history - 1``, including empty ones."""
    if not horizon > 0 or k < 1 or min_history < 1:
        raise ValueError("need horizon > 0, k >= 1, min_history >= 1")
    out = []
    for n in range(min_history - 1, len(seq)):
        lo, hi = window_bounds(seq.times, n, horizon)
        hi = min(hi, lo + k)
        out.append(
            (
                n,
                HorizonTarget(
                    anchor=float(seq.times[n]),
                    horizon=float(horizon),
                    times=seq.times[lo:hi],
                    labels=seq.labels[lo:hi],
                ),
            )
        )
    return out


def mean_length(sequences: Iterable[EventSequence]) -> float:
    lens = [len(s) for s in sequences]
    return float(np.mean(lens)) if lens else math.nan
