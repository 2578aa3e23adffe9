"""Audit the hand-written backward pass against central differences.

The oracle perturbs one weight at a time, recomputes the whole loss and
divides. It runs in extended precision so rounding noise stays far below
the tolerance.
"""
import numpy as np

from tsadp.gradients import backward, gradcheck
from tsadp.model import TrainingBatch, init_model
from tsadp.objectives import LossConfig
from tsadp.synthbench import SynthConfig, generate_dataset

data = generate_dataset(SynthConfig(num_sequences=2, T=6, d_visual=8, d_language=8,
                                    latent_dim=4, seed=3, map_seed=3))
batch = TrainingBatch([(s.visual, s.language) for s in data], [{1, 4}, {2}])
model = init_model(8, 8, seed=3)
cfg = LossConfig(k=1)

report = gradcheck(model, batch, cfg, epsilon=1e-6, tolerance=1e-5)
print(report.table())

# now break one entry on purpose; the report should point right at it
_, grads = backward(model, batch, cfg)
grads["u_l"][3, 5] += 1.0
broken = gradcheck(model, batch, cfg, analytic=grads)
worst = max(broken.params, key=lambda p: p.max_rel_error)
print(f"\nplanted fault found in {worst.name} at {worst.argmax}, passed={broken.passed}")
