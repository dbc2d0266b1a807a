"""
Reading accuracy and F1 off a confusion matrix
==============================================

For single-label classification the micro-averaged F1 always equals
accuracy, so multi-class tables report the same number twice. A binary table
that reports the F1 of one positive class can disagree sharply with accuracy.
"""

import numpy as np

from mouthemo import cli, metrics, solver

# a model that answers "Neutral" for everything on a Joy-heavy test set
joy, neutral = 0, 1
labels = np.array([joy] * 814 + [neutral] * 56)
cm = metrics.confusion(np.full(labels.size, neutral), labels, 2)
print(cm.counts)
print("accuracy", metrics.fmt4(metrics.accuracy_of(cm)),
      "micro-F1", metrics.fmt4(metrics.micro_f1(cm)),
      "Joy F1", metrics.fmt4(metrics.f1_of_class(cm, joy)))

# %%
# The identity holds for any confusion matrix.
rng = np.random.default_rng(0)
for k in (2, 3, 5):
    cm = metrics.ConfusionMatrix(rng.integers(0, 20, (k, k)))
    print(k, metrics.micro_f1(cm) == metrics.accuracy_of(cm))

# %%
# Step logs merge into one table with the best row of each log marked.
emex = [(100, 0.6344, 0.6793), (300, 0.8065, 0.7568), (500, 0.8925, 0.8781),
        (700, 0.8280, 0.7895)]
other = [(100, 0.7100, 0.7000), (300, 0.8925, 0.8500), (500, 0.8925, 0.8600)]
for row in cli.merge_reports({"emex": emex, "other": other}):
    print(",".join(str(v) for v in row))
print(solver.log_csv(emex))
