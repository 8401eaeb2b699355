"""Exact bipartite matching loss between horizon targets and prediction slots.

The presence BCE depends on the assignment only through which slots are
matched, so it folds into the pairwise cost::

    C[i, j] = |t_i - t_j| - log p_j(l_i) - log o_j + log(1 - o_j)
            = |t_i - t_j| - log p_j(l_i) - logit_j

and the full loss is ``sum_j softplus(logit_j) + sum_i C[i, sigma(i)]``.
The assignment is a constant for the backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numba
import numpy as np

from . import grad as G
from .events import HorizonTarget
from .model import PredictionSet


@dataclass(frozen=True)
class Assignment:
    sigma: np.ndarray  # sigma[i] = slot matched to target i
    matched: np.ndarray  # bool mask over K slots

    @classmethod
    def from_sigma(cls, sigma, k: int) -> "Assignment":
        sigma = np.asarray(sigma, dtype=np.int64)
        mask = np.zeros(k, dtype=bool)
        mask[sigma] = True
        return cls(sigma, mask)


@numba.njit(cache=True)
def _hungarian_rect(cost, n, m, out):
    """Shortest augmenting path with potentials, rows ``n <= m`` columns.

    Rows are inserted in order; among equal reduced costs the lowest column
    index is taken, which makes the result deterministic.
    """
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    minv = np.empty(m + 1)
    used = np.empty(m + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = inf
            used[j] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    for j in range(1, m + 1):
        if p[j] != 0:
            out[p[j] - 1] = j - 1


@numba.njit(cache=True)
def _hungarian_batch(costs, sizes, out):
    for b in range(costs.shape[0]):
        n = sizes[b]
        if n > 0:
            _hungarian_rect(costs[b], n, costs.shape[2], out[b])


def hungarian(cost) -> np.ndarray:
    """Minimum-cost injective map from the rows of a T x K matrix (T <= K).

    Returns ``sigma`` with ``sigma[i]`` the column assigned to row ``i``.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    t, k = cost.shape
    if t > k:
        raise ValueError(f"more rows than columns ({t} > {k})")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    out = np.full(t, -1, dtype=np.int64)
    if t:
        _hungarian_rect(cost, t, k, out)
    return out


def hungarian_batch(costs: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Solve ``costs[b, :sizes[b], :]`` for every ``b``; unused rows get -1."""
    costs = np.ascontiguousarray(costs, dtype=np.float64)
    sizes = np.ascontiguousarray(sizes, dtype=np.int64)
    out = np.full(costs.shape[:2], -1, dtype=np.int64)
    _hungarian_batch(costs, sizes, out)
    return out


def brute_force_assignment(cost) -> tuple[float, tuple[int, ...]]:
    """Exhaustive minimum over all injections; for testing."""
    cost = np.asarray(cost, dtype=np.float64)
    t, k = cost.shape
    best, best_sigma = np.inf, ()
    for sigma in permutations(range(k), t):
        c = sum(cost[i, j] for i, j in enumerate(sigma))
        if c < best:
            best, best_sigma = c, sigma
    return float(best) if t else 0.0, best_sigma


# ------------------------------------------------------------------ losses


def build_cost_matrix(target: HorizonTarget, preds: PredictionSet) -> G.Tensor:
    """T x K matching cost, recorded on the active tape."""
    k = preds.o_logit.shape[0]
    t = len(target)
    if t > k:
        raise ValueError(f"target has {t} events but only {k} slots")
    num_labels = preds.label_logits.shape[1]
    dt = (np.asarray(target.times) - target.anchor)[:, None]
    t_hat = G.broadcast_to(G.reshape(preds.t_shift, (1, k)), (t, k))
    time_cost = G.abs_(G.add_const(G.neg(t_hat), np.broadcast_to(dt, (t, k)).copy()))
    logp = G.log_softmax(preds.label_logits)
    flat = np.arange(k)[None, :] * num_labels + np.asarray(target.labels)[:, None]
    label_cost = G.neg(G.gather_flat(logp, flat))
    logit = G.broadcast_to(G.reshape(preds.o_logit, (1, k)), (t, k))
    return time_cost + label_cost - logit


def cost_matrix_values(dt: np.ndarray, labels: np.ndarray, t_shift, label_logprob, o_logit) -> np.ndarray:
    """Off-tape cost for one anchor: ``dt`` and ``labels`` of length T."""
    return (
        np.abs(dt[:, None] - t_shift[None, :])
        - label_logprob[:, labels].T
        - o_logit[None, :]
    )


def batch_matching_loss(preds: PredictionSet, targets: list[HorizonTarget]):
    """Sum of matching losses over N anchors.

    ``preds`` fields have shapes (N, K), (N, K), (N, K, L). Returns the
    on-tape scalar sum and the (N, K) matched-slot mask.
    """
    n, k = preds.o_logit.shape
    num_labels = preds.label_logits.shape[2]
    sizes = np.array([len(tg) for tg in targets], dtype=np.int64)
    if np.any(sizes > k):
        raise ValueError("target longer than slot count")
    t_max = int(sizes.max()) if n else 0
    dts = np.zeros((n, t_max))
    labels = np.zeros((n, t_max), dtype=np.int64)
    for a, tg in enumerate(targets):
        dts[a, : sizes[a]] = np.asarray(tg.times) - tg.anchor
        labels[a, : sizes[a]] = tg.labels

    logp = G.log_softmax(preds.label_logits)
    t_hat = preds.t_shift.value
    o = preds.o_logit.value
    rows = np.arange(n)[:, None, None]
    costs = (
        np.abs(dts[:, :, None] - t_hat[:, None, :])
        - logp.value[rows, np.arange(k)[None, None, :], labels[:, :, None]]
        - o[:, None, :]
    )
    sigma = hungarian_batch(costs, sizes)

    valid = sigma >= 0
    anchor_idx = np.nonzero(valid)[0]
    slot_idx = sigma[valid]
    pair_dt = dts[valid]
    pair_label = labels[valid]
    slot_flat = anchor_idx * k + slot_idx

    loss = G.sum_(G.softplus(preds.o_logit))
    if len(slot_flat):
        t_sel = G.gather_flat(preds.t_shift, slot_flat)
        loss = loss + G.sum_(G.abs_(G.add_const(G.neg(t_sel), pair_dt)))
        loss = loss - G.sum_(G.gather_flat(logp, slot_flat * num_labels + pair_label))
        loss = loss - G.sum_(G.gather_flat(preds.o_logit, slot_flat))

    matched = np.zeros((n, k), dtype=bool)
    matched[anchor_idx, slot_idx] = True
    return loss, matched, sigma


def matching_loss(target: HorizonTarget, preds: PredictionSet) -> tuple[G.Tensor, Assignment]:
    k = preds.o_logit.shape[0]
    batched = PredictionSet(
        G.reshape(preds.o_logit, (1, k)),
        G.reshape(preds.t_shift, (1, k)),
        G.reshape(preds.label_logits, (1,) + preds.label_logits.shape),
    )
    loss, matched, sigma = batch_matching_loss(batched, [target])
    return loss, Assignment(sigma[0][sigma[0] >= 0], matched[0])


def literal_matching_objective(target: HorizonTarget, presence, t_shift, label_probs, sigma) -> float:
    """Pairwise NLL plus presence BCE for a given alignment, in plain floats."""
    matched = set(int(j) for j in sigma)
    total = 0.0
    for i, (t, l) in enumerate(zip(target.times, target.labels)):
        j = int(sigma[i])
        total += abs((t - target.anchor) - t_shift[j]) - np.log(label_probs[j, l])
    for j in range(len(presence)):
        total -= np.log(presence[j]) if j in matched else np.log1p(-presence[j])
    return float(total)


def positional_loss(t_shift: G.Tensor, label_logits: G.Tensor, dts: np.ndarray, labels: np.ndarray, sizes: np.ndarray) -> G.Tensor:
    """Sum over anchors of ``sum_{i<T} |dt_i - t_i| + CE_i`` with slot i <-> i-th event.

    ``t_shift`` (N, K), ``label_logits`` (N, K, L); ``dts``/``labels`` (N, K)
    padded, valid for the first ``sizes[a]`` entries.
    """
    n, k = t_shift.shape
    num_labels = label_logits.shape[2]
    valid = np.arange(k)[None, :] < np.asarray(sizes)[:, None]
    flat = np.nonzero(valid.reshape(-1))[0]
    if not len(flat):
        return G.Tensor(0.0)
    t_sel = G.gather_flat(t_shift, flat)
    time_loss = G.sum_(G.abs_(G.add_const(G.neg(t_sel), dts.reshape(-1)[flat])))
    logp = G.log_softmax(label_logits)
    ce = G.neg(G.sum_(G.gather_flat(logp, flat * num_labels + labels.reshape(-1)[flat])))
    return time_loss + ce


def positional_loss_next_k(targets: list, preds: PredictionSet) -> G.Tensor:
    """Single-anchor positional next-K loss. ``targets`` is a list of (dt, label)."""
    k = preds.t_shift.shape[0]
    targets = list(targets)[:k]
    dts = np.zeros((1, k))
    labels = np.zeros((1, k), dtype=np.int64)
    for i, (dt, l) in enumerate(targets):
        dts[0, i], labels[0, i] = dt, l
    return positional_loss(
        G.reshape(preds.t_shift, (1, k)),
        G.reshape(preds.label_logits, (1,) + preds.label_logits.shape),
        dts,
        labels,
        np.array([len(targets)]),
    )


def next_event_loss(t_shift: G.Tensor, label_logits: G.Tensor, dts: np.ndarray, labels: np.ndarray) -> G.Tensor:
    """MAE + cross-entropy summed over anchors; ``t_shift`` (N,), logits (N, L)."""
    n, num_labels = label_logits.shape
    time_loss = G.sum_(G.abs_(G.add_const(G.neg(t_shift), dts)))
    logp = G.log_softmax(label_logits)
    ce = G.neg(G.sum_(G.gather_flat(logp, np.arange(n) * num_labels + labels)))
    return time_loss + ce
