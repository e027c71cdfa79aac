"""DPSGD with per-example clipping and the moments accountant: train a
classifier under (epsilon, delta)-DP and print the spent budget.

Run: python3 demos/04_dpsgd_accountant.py
"""

import numpy as np

from privsec import dp, model_core as mc
from privsec.datasets import synthesize_dataset

data = synthesize_dataset("gaussians", 256, 0.8, np.random.default_rng(11))
model = mc.build_mlp([2, 16, 2], loss="cross_entropy",
                     rng=np.random.default_rng(12))

cfg = dp.DpConfig(clip_norm=1.0, noise_multiplier=1.0, lot_size=32,
                  batch_size=32, delta=1e-5)
trained, ledger = dp.dpsgd_train(model, data, cfg, epochs=3, lr=0.1,
                                 rng=np.random.default_rng(13))

acc = float((mc.forward(trained, data.X).argmax(axis=1) == data.y).mean())
eps, lam = dp.get_epsilon_with_lambda(ledger, cfg.delta)
print(f"accuracy {acc:.3f} after {ledger.steps} lots at q={ledger.q:.3f}")
print(f"privacy spent: epsilon={eps:.3f} at delta={cfg.delta} "
      f"(optimal moment order {lam})")

# the textbook single-step sanity point: q=1, sigma=1, one step
one = dp.accountant_step(dp.PrivacyLedger(), q=1.0, sigma=1.0)
print(f"reference eps(q=1, sigma=1, T=1, delta=1e-5) = "
      f"{dp.get_epsilon(one, 1e-5):.4f}")
