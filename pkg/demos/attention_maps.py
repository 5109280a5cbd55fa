"""
Reading attention maps
======================

Train briefly on hop2, then look at what the [cls] token attends to in the
last layer and how far the learned omega biases moved from zero.
"""

import numpy as np

from qat.cli import run_training
from qat.config import RunConfig
from qat.data import gen_synthetic

data = gen_synthetic("hop2", 120, seed=3)
state, train, _ = run_training(RunConfig(epochs=8, num_layers=2), data)
model = state.model
print(f"train accuracy {train.accuracy:.3f}")

np.set_printoptions(precision=3, suppress=True)
print("omega1 (layer x head):\n", model.omega.omega1.data)
print("omega2 (layer x head):\n", model.omega.omega2.data)

ex = model.prepare_example(data[0])
res = model.forward(ex.choices)
last = res.attention[-1]  # (choices, heads, n, n)
for b, labels in enumerate(res.labels):
    n = res.lengths[b]
    cls_row = last[b, :, 0, :n].mean(axis=0)
    kg = range(res.n_lm[b], n)
    top = sorted(kg, key=lambda j: -cls_row[j])[:3]
    mark = "*" if b == ex.answer else " "
    print(f"\n{mark} choice {b}: logit {res.logits.data[b]:+.3f}, KG share of [cls] attention {cls_row[res.n_lm[b]:].sum():.2f}")
    for j in top:
        print(f"    {cls_row[j]:.3f}  {labels[j]}")
