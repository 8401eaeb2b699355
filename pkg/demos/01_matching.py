"""
Matching a forecast set to the future
=====================================

A DeTPP head emits K unordered slots. Training aligns them with the
observed future by an exact minimum-cost assignment, so the loss never
depends on slot order.
"""

import numpy as np

from detpp import grad as G
from detpp.events import HorizonTarget
from detpp.matching import build_cost_matrix, hungarian, matching_loss
from detpp.model import PredictionSet

# three future events after an anchor at t = 10
target = HorizonTarget(anchor=10.0, horizon=5.0, times=np.array([10.8, 12.0, 14.1]),
                       labels=np.array([2, 0, 2]))

# four slots: presence logit, time offset, label logits (L = 3)
preds = PredictionSet(
    G.Tensor(np.array([1.5, 0.2, -2.0, 2.0])),
    G.Tensor(np.array([2.1, 4.0, 0.5, 0.9])),
    G.Tensor(np.array([[3.0, 0.0, 0.0],
                       [0.0, 0.0, 2.0],
                       [0.0, 1.0, 0.0],
                       [0.0, 0.0, 3.0]])),
)

cost = build_cost_matrix(target, preds).value
print("pairwise cost (targets x slots):")
print(np.round(cost, 3))

sigma = hungarian(cost)
print("assignment target -> slot:", sigma.tolist())

loss, assignment = matching_loss(target, preds)
print(f"loss {loss.item():.4f}, matched slots {np.flatnonzero(assignment.matched).tolist()}")

# shuffling the slots changes nothing but the slot indices
perm = np.array([3, 1, 0, 2])
shuffled = PredictionSet(*(G.Tensor(x.value[perm]) for x in (preds.o_logit, preds.t_shift, preds.label_logits)))
loss2, a2 = matching_loss(target, shuffled)
print(f"after permuting slots: loss {loss2.item():.4f}, slots {perm[a2.sigma].tolist()}")
