"""Per-slot presence thresholds from matching frequencies and score reservoirs."""

from __future__ import annotations

import json
import struct

import numpy as np

_VERSION = b"CAL1"


class CalibrationError(RuntimeError):
    pass


class Calibrator:
    """Running match rate and a uniform reservoir of presence scores per slot.

    ``threshold(j)`` is the lower (1 - m_j)-quantile of slot j's reservoir, so
    that about a fraction m_j of training-time scores sit at or above it.
    """

    def __init__(self, k: int, capacity: int = 1024, seed: int = 0):
        self.k = k
        self.capacity = capacity
        self.seed = seed
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0xCA1]))
        self.count = np.zeros(k, dtype=np.int64)
        self.matched = np.zeros(k, dtype=np.int64)
        self.reservoir = np.zeros((k, capacity))

    @property
    def match_rate(self) -> np.ndarray:
        return np.where(self.count > 0, self.matched / np.maximum(self.count, 1), 0.0)

    def reservoir_values(self, j: int) -> np.ndarray:
        return self.reservoir[j, : min(self.count[j], self.capacity)]

    def observe(self, j: int, o_hat: float, matched: bool) -> None:
        self.count[j] += 1
        self.matched[j] += bool(matched)
        n = self.count[j]
        if n <= self.capacity:
            self.reservoir[j, n - 1] = o_hat
        else:
            r = self.rng.integers(n)
            if r < self.capacity:
                self.reservoir[j, r] = o_hat

    def observe_batch(self, o_hat: np.ndarray, matched: np.ndarray) -> None:
        """One row per anchor, one column per slot."""
        o_hat = np.asarray(o_hat, dtype=np.float64)
        matched = np.asarray(matched, dtype=bool)
        self.matched += matched.sum(axis=0)
        slots = np.arange(self.k)
        for row in o_hat:
            self.count += 1
            n = self.count
            # all slots share a count whenever they are only fed through this path
            if n.max() <= self.capacity and n.min() == n.max():
                self.reservoir[:, n[0] - 1] = row
                continue
            r = self.rng.integers(n)
            direct = n <= self.capacity
            self.reservoir[slots[direct], n[direct] - 1] = row[direct]
            hit = ~direct & (r < self.capacity)
            self.reservoir[slots[hit], r[hit]] = row[hit]

    def threshold(self, j: int) -> float:
        values = self.reservoir_values(j)
        if not len(values):
            raise CalibrationError("calibrate before inference")
        return float(np.quantile(values, 1.0 - self.match_rate[j], method="lower"))

    def thresholds(self) -> np.ndarray:
        return np.array([self.threshold(j) for j in range(self.k)])

    @property
    def ready(self) -> bool:
        return bool(np.all(self.count > 0))

    def reset(self) -> None:
        self.count[:] = 0
        self.matched[:] = 0
        self.reservoir[:] = 0.0

    # ------------------------------------------------------------ bytes

    def to_bytes(self) -> bytes:
        header = json.dumps(
            {"k": self.k, "capacity": self.capacity, "seed": self.seed,
             "rng": self.rng.bit_generator.state}
        ).encode()
        return b"".join([
            _VERSION,
            struct.pack("<I", len(header)),
            header,
            self.count.astype("<i8").tobytes(),
            self.matched.astype("<i8").tobytes(),
            self.reservoir.astype("<f8").tobytes(),
        ])

    @classmethod
    def from_bytes(cls, data: bytes) -> "Calibrator":
        if data[:4] != _VERSION:
            raise CalibrationError(f"calibration version mismatch: {data[:4]!r}")
        (n,) = struct.unpack("<I", data[4:8])
        meta = json.loads(data[8:8 + n])
        cal = cls(meta["k"], meta["capacity"], meta["seed"])
        cal.rng.bit_generator.state = meta["rng"]
        k, cap = cal.k, cal.capacity
        pos = 8 + n
        cal.count = np.frombuffer(data, "<i8", k, pos).astype(np.int64)
        pos += 8 * k
        cal.matched = np.frombuffer(data, "<i8", k, pos).astype(np.int64)
        pos += 8 * k
        cal.reservoir = np.frombuffer(data, "<f8", k * cap, pos).reshape(k, cap).copy()
        return cal

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Calibrator)
            and self.k == other.k
            and self.capacity == other.capacity
            and np.array_equal(self.count, other.count)
            and np.array_equal(self.matched, other.matched)
            and np.array_equal(self.reservoir, other.reservoir)
        )
