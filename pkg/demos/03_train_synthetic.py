"""
Training EmEx on toy mouth textures
===================================

Three separable 16x16 textures stand in for mouth crops. The small network
memorises them within a few dozen ADAM steps, and a checkpoint written during
training reproduces the same predictions once reloaded.
"""

import tempfile
from pathlib import Path

import numpy as np

from mouthemo import net, solver, synthetic
from mouthemo.tensor import SeededRng

x, y = synthetic.toy_mouths(per_class=10, size=16)
print("images", x.shape, "labels", np.bincount(y))

spec = net.build_emex((1, 16, 16), 3)
rng = SeededRng(1234)
state = net.init_state(spec, rng)
print(sum(p.size for p in state.params.values()), "parameters")

# %%
# Validate every 25 steps on the training images themselves.
cfg = solver.SolverConfig(max_iterations=100, test_interval=25, test_batch_size=10,
                          test_iterations=3)
out = Path(tempfile.mkdtemp())
state, log, paths = solver.train(spec, state, (x, y), (x, y), cfg, rng, out_dir=out)
for row in log.rows:
    print(f"step {row.step:4d}  loss {row.train_loss:.4f}  accuracy {row.accuracy:.4f}")
print(log.to_csv())

# %%
# Fresh textures drawn with another seed act as a test set.
xt, yt = synthetic.toy_mouths(per_class=10, size=16, seed=99)
m = solver.evaluate(spec, state, (xt, yt))
print("test accuracy", m.accuracy, "per-class F1", np.round(m.class_f1, 4))
print(m.confusion.counts)

reloaded, adam, step = solver.load_checkpoint(paths[-1], spec)
again = solver.evaluate(spec, reloaded, (xt, yt))
print("checkpoint step", step, "adam t", adam.t, "same accuracy:", again.accuracy == m.accuracy)
