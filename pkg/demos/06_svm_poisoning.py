"""Training-time poisoning of an SVM: climb the validation hinge loss by
moving a single mislabeled point through full retrains, then compare
clean vs poisoned validation error. Also shows plain label flipping.

Run: python3 demos/06_svm_poisoning.py
"""

import numpy as np

from privsec import attacks as atk, model_core as mc, svm as sv
from privsec.datasets import synthesize_dataset, to_pm1

rng = np.random.default_rng(1)
data = to_pm1(synthesize_dataset("gaussians", 60, 0.7, rng, mu=1.0))
order = rng.permutation(60)
y = np.asarray(data.y)
train = mc.Dataset(data.X[order[:20]], y[order[:20]])
valid = mc.Dataset(data.X[order[20:]], y[order[20:]])

params = dict(kernel="linear", C=10.0)


def err01(model, ds):
    preds = np.array([1 if sv.svm_decision(model, xi) > 0 else -1 for xi in ds.X])
    return float((preds != np.asarray(ds.y)).mean())


clean = sv.train_svm(train, rng=np.random.default_rng(0), **params)
print(f"clean validation error {err01(clean, valid):.3f}")

x0 = train.X[np.asarray(train.y) == 1][0]
res = atk.svm_poison_point(train, valid, params, x0, -1,
                           atk.PoisonConfig(step=1.0, max_iter=25))
print(f"poison crafting: hinge loss {res.trace[0]:.3f} -> {res.trace[-1]:.3f} "
      f"in {len(res.trace) - 1} accepted steps")

poisoned = sv.train_svm(
    mc.Dataset(np.vstack([train.X, res.x_poison[None, :]]),
               np.concatenate([train.y, [-1.0]])),
    rng=np.random.default_rng(0), **params)
print(f"poisoned validation error {err01(poisoned, valid):.3f} "
      "(one crafted point)")

flipped = atk.label_flip(train, 0.3, np.random.default_rng(2))
noisy = sv.train_svm(flipped, rng=np.random.default_rng(0), **params)
print(f"30% label-flip validation error {err01(noisy, valid):.3f}")
