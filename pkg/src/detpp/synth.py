"""Synthetic event-stream generators.

Timestamps are quantised to 9 significant digits at generation time so that
the JSONL format round-trips them exactly. Each sequence draws from its own
RNG stream keyed by ``(seed, sequence_index)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import EventSequence


def _quantise(t: float) -> float:
    return float(format(t, ".9g"))


def _stream(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


@dataclass(frozen=True)
class HawkesSpec:
    L: int
    mu: np.ndarray
    alpha: np.ndarray
    beta: float
    t_max: float
    seed: int = 0

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if mu.shape != (self.L,) or alpha.shape != (self.L, self.L):
            raise ValueError("mu must have length L and alpha shape (L, L)")
        if np.any(mu < 0) or np.any(alpha < 0):
            raise ValueError("mu and alpha must be non-negative")
        if not self.beta > 0 or not self.t_max > 0:
            raise ValueError("beta and t_max must be positive")
        if alpha.sum(axis=1).max() / self.beta >= 1:
            raise ValueError("supercritical: max row sum of alpha / beta must be < 1")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "alpha", alpha)


def _hawkes_one(spec: HawkesSpec, rng: np.random.Generator) -> tuple[list[float], list[int]]:
    # excitation[l] = sum_j alpha[l_j, l] exp(-beta (t - t_j)), carried forward in time
    excitation = np.zeros(spec.L)
    t = 0.0
    times: list[float] = []
    labels: list[int] = []
    total_mu = spec.mu.sum()
    while True:
        bound = total_mu + excitation.sum()  # intensity is non-increasing until next event
        if bound <= 0:
            break
        w = rng.exponential(1.0 / bound)
        t_new = t + w
        if t_new > spec.t_max:
            break
        excitation *= np.exp(-spec.beta * w)
        t = t_new
        lam = spec.mu + excitation
        u = rng.uniform(0.0, bound)
        if u > lam.sum():
            continue
        label = int(np.searchsorted(np.cumsum(lam), u, side="right"))
        label = min(label, spec.L - 1)
        tq = _quantise(t)
        if times and tq <= times[-1]:
            continue  # float tie after quantisation: re-draw
        times.append(tq)
        labels.append(label)
        excitation += spec.alpha[label]
    return times, labels


def generate_hawkes(spec: HawkesSpec, n_sequences: int) -> list[EventSequence]:
    """Ogata thinning on a multivariate exponential-kernel Hawkes process."""
    out = []
    for i in range(n_sequences):
        times, labels = _hawkes_one(spec, _stream(spec.seed, i))
        out.append(EventSequence(f"hawkes-{i}", np.array(times), np.array(labels, dtype=np.int64)))
    return out


@dataclass(frozen=True)
class MarkovBurstSpec:
    """Markov-modulated label chain with label-dependent exponential gaps.

    ``transition`` and ``rates`` default to random draws from ``seed``: sticky
    rows (bursts of repeated labels) and rates spread over a decade.
    """

    L: int
    t_max: float
    seed: int = 0
    transition: np.ndarray | None = field(default=None)
    rates: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.L < 2:
            raise ValueError("markov bursts need L >= 2")
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xB0057]))
        trans = self.transition
        if trans is None:
            trans = rng.dirichlet(np.full(self.L, 0.5), size=self.L)
            trans = 0.6 * trans + 0.4 * np.eye(self.L)
        trans = np.asarray(trans, dtype=np.float64)
        if trans.shape != (self.L, self.L) or np.any(trans < 0):
            raise ValueError("transition must be a non-negative (L, L) matrix")
        if not np.allclose(trans.sum(axis=1), 1.0):
            raise ValueError("transition rows must sum to 1")
        rates = self.rates
        if rates is None:
            rates = np.exp(rng.uniform(np.log(0.4), np.log(4.0), size=self.L))
        rates = np.asarray(rates, dtype=np.float64).reshape(-1)
        if rates.shape != (self.L,) or np.any(rates <= 0):
            raise ValueError("rates must be L positive values")
        object.__setattr__(self, "transition", trans)
        object.__setattr__(self, "rates", rates)

    def stationary(self) -> np.ndarray:
        vals, vecs = np.linalg.eig(self.transition.T)
        v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
        return v / v.sum()


def _markov_one(spec: MarkovBurstSpec, rng: np.random.Generator) -> tuple[list[float], list[int]]:
    cum = np.cumsum(spec.transition, axis=1)
    label = int(rng.integers(spec.L))
    t = rng.exponential(1.0 / spec.rates[label])
    times: list[float] = []
    labels: list[int] = []
    while t <= spec.t_max:
        tq = _quantise(t)
        if not times or tq > times[-1]:
            times.append(tq)
            labels.append(label)
        nxt = int(np.searchsorted(cum[label], rng.uniform(), side="right"))
        label = min(nxt, spec.L - 1)
        t += rng.exponential(1.0 / spec.rates[label])
    return times, labels


def generate_markov_bursts(
    L: int,
    t_max: float,
    seed: int,
    n_sequences: int,
    transition: np.ndarray | None = None,
    rates: np.ndarray | None = None,
) -> list[EventSequence]:
    """Gap before an event is Exp(rate of that event's label)."""
    spec = MarkovBurstSpec(L, t_max, seed, transition, rates)
    out = []
    for i in range(n_sequences):
        times, labels = _markov_one(spec, _stream(seed, i + 1))
        out.append(EventSequence(f"markov-{i}", np.array(times), np.array(labels, dtype=np.int64)))
    return out


def split_dataset(sequences, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Shuffle deterministically and cut into ``len(fractions)`` disjoint parts."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if np.any(fractions <= 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be positive and sum to 1")
    n = len(sequences)
    if n < len(fractions):
        raise ValueError(f"cannot split {n} sequences into {len(fractions)} parts")
    order = np.random.default_rng(seed).permutation(n)
    counts = np.floor(fractions * n + 1e-9).astype(int)
    counts = np.maximum(counts, 1)
    # hand the rounding remainder to the largest part
    counts[np.argmax(fractions)] += n - counts.sum()
    bounds = np.concatenate([[0], np.cumsum(counts)])
    return tuple([sequences[j] for j in order[bounds[i]:bounds[i + 1]]] for i in range(len(fractions)))
