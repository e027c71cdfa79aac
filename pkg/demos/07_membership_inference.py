"""Shadow-model membership inference: an overfit victim leaks who was in
its training set; an untrained victim leaks nothing.

Run: python3 demos/07_membership_inference.py (takes ~10 s)
"""

import numpy as np

from privsec import attacks as atk, model_core as mc
from privsec.datasets import synthesize_dataset

pop = synthesize_dataset("gaussians", 1600, 1.0, np.random.default_rng(13),
                         mu=0.5)
y = np.asarray(pop.y)
order = np.random.default_rng(99).permutation(len(y))
X, y = pop.X[order], y[order]
member = mc.Dataset(X[:30], y[:30])
nonmember = mc.Dataset(X[30:60], y[30:60])
rest = mc.Dataset(X[60:], y[60:])

victim = atk._train_mlp((2, 32, 2), member.X, member.y, 8000, 0.5,
                        np.random.default_rng(15))
acc = lambda ds: float(
    (mc.softmax(mc.forward(victim, ds.X)).argmax(1) == ds.y).mean())
print(f"victim train acc {acc(member):.2f}, held-out acc {acc(nonmember):.2f} "
      "(memorization gap)")

cfg = atk.MembershipConfig(n_shadows=6, shadow_dims=(32,), shadow_epochs=8000,
                           in_size=30)
_, auc = atk.membership_attack(victim, rest, member, nonmember, cfg,
                               np.random.default_rng(14))
print(f"membership AUC against the overfit victim: {auc:.3f}")

uniform = mc.build_mlp([2, 2], loss="cross_entropy", rng=np.random.default_rng(17))
uniform.layers[0].W[:] = 0.0
uniform.layers[0].b[:] = 0.0
_, auc0 = atk.membership_attack(uniform, rest, member, nonmember,
                                atk.MembershipConfig(n_shadows=4,
                                                     shadow_epochs=300,
                                                     in_size=30),
                                np.random.default_rng(14))
print(f"membership AUC against a constant-output victim: {auc0:.3f} (chance)")
