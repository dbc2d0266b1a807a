"""
Checking backpropagation against finite differences
===================================================

Every analytic gradient in the network can be compared with a central
difference of the loss. Relative errors around 1e-7 or below mean the
backward pass is right; anything near 1e-2 means it is not.
"""

import numpy as np

from mouthemo import net
from mouthemo.tensor import SeededRng

h = 1e-5


def rel_error(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


rng = SeededRng(0)
x = rng.normal(2 * 1 * 16 * 16).reshape(2, 1, 16, 16)
labels = np.array([0, 1])

spec = net.build_emex((1, 16, 16), 2)
state = net.init_state(spec, rng)
for i, shape in enumerate(spec.shapes()):
    print(i, spec.layers[i - 1].kind if i else "input", shape)

# %%
# Analytic gradients from one forward and one backward pass.
loss, grads, trace = net.loss_and_grads(spec, state, x, labels, "train", rng)
print("loss", loss)

# %%
# Numeric gradients for a handful of entries of each tensor.
for name, p in state.params.items():
    flat, g = p.reshape(-1), grads[name].reshape(-1)
    picks = rng.permutation(flat.size)[:5]
    numeric = []
    for j in picks:
        old = flat[j]
        flat[j] = old + h
        up = net.cross_entropy_loss(net.net_forward(spec, state, x).output, labels)[0]
        flat[j] = old - h
        down = net.cross_entropy_loss(net.net_forward(spec, state, x).output, labels)[0]
        flat[j] = old
        numeric.append((up - down) / (2 * h))
    print(f"{name:10s} relative error {rel_error(g[picks], np.array(numeric)):.2e}")
