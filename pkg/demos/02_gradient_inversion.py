"""A malicious federated server reconstructs a client's training example
from its model update (iDLG: label from bias-gradient signs, then input by
gradient matching).

Run: python3 demos/02_gradient_inversion.py
"""

import numpy as np

from privsec import fed, inversion as inv, model_core as mc
from privsec.datasets import synthesize_dataset

data = synthesize_dataset("class_templates_8x8", 2, 0.25,
                          np.random.default_rng(5), n_classes=4)
model = mc.build_mlp([64, 16, 4], "tanh", "cross_entropy",
                     np.random.default_rng(7))

# one example per client, one full-batch local step: the update is an
# exact gradient scaled by -lr
shards = [mc.Dataset(data.X[i:i + 1], data.y[i:i + 1]) for i in range(2)]
cfg = fed.FedConfig(rounds=1, local_epochs=1, local_batch=0, lr=0.1)

icfg = inv.InversionConfig(variant="idlg", max_iters=2000, seeds=(0, 1, 2),
                           stop_loss=1e-14, input_shape=(8, 8))
hook, log = inv.inversion_server_hook(icfg, model)
fed.run_federation(model, shards, cfg, fed.HookSet(pre_aggregate=[hook]),
                   master_seed=5)

for rec in log:
    res = rec["result"]
    truth = shards[rec["rank"] - 1]
    mse = float(np.mean((res.x_hat - truth.X[0]) ** 2))
    print(f"client rank {rec['rank']}: true label {truth.y[0]}, "
          f"recovered label {res.y_hat}, match loss {res.final_match_loss:.2e}, "
          f"pixel MSE {mse:.2e}")
