"""
Why autoregressive decoding repeats itself
==========================================

A next-event model decoded greedily feeds its own argmax back in. On a
chain whose most likely successor is always the same hub label, the
rollout collapses onto that label. A set predictor forecasts the window
at once and keeps the label mix.
"""

import numpy as np

from detpp.experiment import benchmark_process
from detpp.inference import predict_sequences
from detpp.metrics import label_entropy
from detpp.synth import generate_markov_bursts, split_dataset
from detpp.train import TrainConfig, train

trans, rates = benchmark_process(5)
print("transition matrix (row = current label):")
print(np.round(trans, 2))

seqs = generate_markov_bursts(5, 30.0, 5, 240, trans, rates)
tr, va, te = split_dataset(seqs, (0.75, 0.125, 0.125), seed=5)

pools = {}
for method in ("mae_ce", "detpp"):
    cfg = TrainConfig(method=method, L=5, K=12, H=6.0, hidden_dim=32, epochs=8, learning_rate=3e-3)
    result = train(cfg, tr, va)
    records = predict_sequences(result.model, te, result.thresholds)
    pools[method] = [e[1] for r in records for e in r["events"]]
    print(f"\n{method}: labels forecast at one anchor {[e[1] for e in records[3]['events']]}")

truth = [int(l) for s in te for l in s.labels]
print()
for name, labels in [("ground truth", truth), ("mae_ce", pools["mae_ce"]), ("detpp", pools["detpp"])]:
    freq = np.bincount(labels, minlength=5) / max(len(labels), 1)
    print(f"{name:>12}: entropy {label_entropy(labels):.3f}  frequencies {np.round(freq, 2)}")
