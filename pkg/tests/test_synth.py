import math

import numpy as np
import pytest

from detpp.metrics import label_entropy
from detpp.synth import HawkesSpec, generate_hawkes, generate_markov_bursts, split_dataset


def _poisson_spec(seed=1):
    return HawkesSpec(L=1, mu=[2.0], alpha=[[0.0]], beta=1.0, t_max=50.0, seed=seed)


def test_poisson_limit_mean_count():
    seqs = generate_hawkes(_poisson_spec(), 200)
    mean = np.mean([len(s) for s in seqs])
    assert abs(mean - 100.0) < 2 * 1.4


def test_hawkes_deterministic():
    spec = HawkesSpec(L=2, mu=[0.5, 0.3], alpha=[[0.3, 0.2], [0.1, 0.4]], beta=1.5, t_max=30.0, seed=9)
    a, b = generate_hawkes(spec, 20), generate_hawkes(spec, 20)
    assert a == b


def test_hawkes_subcritical_sorted_and_labelled():
    spec = HawkesSpec(L=2, mu=[0.5, 0.3], alpha=[[0.3, 0.2], [0.1, 0.4]], beta=1.5, t_max=30.0, seed=2)
    for s in generate_hawkes(spec, 50):
        assert np.all(np.diff(s.times) > 0)
        assert np.all(np.isfinite(s.times)) and s.times.max(initial=0) <= 30.0
        assert set(s.labels.tolist()) <= {0, 1}


def test_hawkes_excitation_raises_counts():
    base = generate_hawkes(HawkesSpec(1, [1.0], [[0.0]], 2.0, 40.0, 3), 100)
    excited = generate_hawkes(HawkesSpec(1, [1.0], [[1.0]], 2.0, 40.0, 3), 100)
    # stationary rate mu / (1 - alpha / beta) doubles the Poisson rate
    assert np.mean([len(s) for s in excited]) == pytest.approx(80.0, rel=0.1)
    assert np.mean([len(s) for s in base]) == pytest.approx(40.0, rel=0.1)


def test_hawkes_cross_excitation_direction():
    # alpha[i, j]: an event of label i raises the intensity of label j
    alpha = np.array([[0.5, 0.2], [0.3, 0.4]])
    spec = HawkesSpec(L=2, mu=[0.4, 0.2], alpha=alpha, beta=1.5, t_max=300.0, seed=8)
    counts = np.array([np.bincount(s.labels, minlength=2) for s in generate_hawkes(spec, 60)]).mean(axis=0)
    expected = np.linalg.solve(np.eye(2) - alpha.T / 1.5, [0.4, 0.2]) * 300.0
    np.testing.assert_allclose(counts, expected, rtol=0.05)


def test_supercritical_rejected():
    with pytest.raises(ValueError, match="supercritical"):
        HawkesSpec(L=1, mu=[1.0], alpha=[[2.0]], beta=1.0, t_max=10.0)


def test_markov_sticky_self_transition_rate():
    trans = np.full((3, 3), 0.005) + np.eye(3) * 0.985
    seqs = generate_markov_bursts(3, 200.0, 4, 50, transition=trans)
    same = total = 0
    for s in seqs:
        same += int(np.sum(s.labels[1:] == s.labels[:-1]))
        total += len(s) - 1
    assert abs(same / total - 0.99) < 0.005


def test_markov_symmetric_entropy():
    seqs = generate_markov_bursts(2, 100.0, 5, 100, transition=np.full((2, 2), 0.5), rates=[1.0, 1.0])
    labels = np.concatenate([s.labels for s in seqs])
    assert label_entropy(labels) == pytest.approx(math.log(2), abs=0.005)


def test_markov_deterministic_and_valid():
    a = generate_markov_bursts(4, 30.0, 11, 10)
    assert a == generate_markov_bursts(4, 30.0, 11, 10)
    assert a != generate_markov_bursts(4, 30.0, 12, 10)
    for s in a:
        assert np.all(np.diff(s.times) > 0)


def test_markov_gaps_follow_label_rate():
    seqs = generate_markov_bursts(2, 400.0, 6, 40, rates=[0.5, 5.0])
    gaps = {0: [], 1: []}
    for s in seqs:
        for l, g in zip(s.labels[1:], np.diff(s.times)):
            gaps[int(l)].append(g)
    assert np.mean(gaps[0]) == pytest.approx(2.0, rel=0.05)
    assert np.mean(gaps[1]) == pytest.approx(0.2, rel=0.05)


def test_split_sizes_and_partition():
    seqs = generate_markov_bursts(2, 5.0, 0, 10)
    tr, va, te = split_dataset(seqs, (0.8, 0.1, 0.1), seed=3)
    assert (len(tr), len(va), len(te)) == (8, 1, 1)
    assert sorted(s.id for s in tr + va + te) == sorted(s.id for s in seqs)
    again = split_dataset(seqs, (0.8, 0.1, 0.1), seed=3)
    assert [s.id for s in again[0]] == [s.id for s in tr]


def test_split_rejects_bad_input():
    seqs = generate_markov_bursts(2, 5.0, 0, 2)
    with pytest.raises(ValueError):
        split_dataset(seqs, (0.8, 0.1, 0.1))
    with pytest.raises(ValueError):
        split_dataset(seqs, (0.5, 0.4))
