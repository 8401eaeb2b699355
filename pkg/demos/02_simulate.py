"""
Synthetic event streams
=======================

Two generators: a multivariate Hawkes process (Ogata thinning) and a
bursty Markov chain over labels with label-specific gap rates.
"""

import numpy as np

from detpp.experiment import benchmark_process
from detpp.metrics import label_entropy
from detpp.synth import HawkesSpec, generate_hawkes, generate_markov_bursts

spec = HawkesSpec(L=2, mu=[0.4, 0.2], alpha=[[0.5, 0.2], [0.3, 0.4]], beta=1.5, t_max=50.0, seed=3)
hawkes = generate_hawkes(spec, 200)
counts = np.array([np.bincount(s.labels, minlength=2) for s in hawkes]).mean(axis=0)
print("hawkes: mean events per label", np.round(counts, 2))

# alpha[i, j] is how much an event of label i excites label j, so the
# stationary rate solves (I - alpha^T / beta) lambda = mu
alpha, mu = np.array(spec.alpha), np.array(spec.mu)
stationary = np.linalg.solve(np.eye(2) - alpha.T / spec.beta, mu) * spec.t_max
print("hawkes: stationary expectation  ", np.round(stationary, 2))

trans, rates = benchmark_process(5)
bursts = generate_markov_bursts(5, 40.0, 7, 200, trans, rates)
labels = np.concatenate([s.labels for s in bursts])
print(f"bursts: {np.mean([len(s) for s in bursts]):.1f} events per sequence")
print("bursts: label marginals", np.round(np.bincount(labels) / len(labels), 3))
print(f"bursts: label entropy {label_entropy(labels):.3f} nats (max {np.log(5):.3f})")
print("first sequence:", [(round(t, 2), int(l)) for t, l in bursts[0].events[:8]])
