"""Test-time evasion: gradient-descent evasion of an RBF SVM with a
mimicry term, plus FGSM on an MLP.

Run: python3 demos/05_evasion_fgsm.py
"""

import numpy as np

from privsec import attacks as atk, model_core as mc, svm as sv
from privsec.datasets import synthesize_dataset, to_pm1

data = to_pm1(synthesize_dataset("gaussians", 80, 0.6,
                                 np.random.default_rng(0), mu=1.5))
model = sv.train_svm(data, kernel="rbf", C=1.0, gamma=0.5,
                     rng=np.random.default_rng(1))
y = np.asarray(data.y)
benign = data.X[y == -1]
x0 = next(x for x in data.X[y == 1] if sv.svm_decision(model, x) > 0)

cfg = atk.EvasionConfig(lambda_mimicry=0.5, d_max=5.0, step=0.1, max_iter=300)
x_adv, trace = atk.biggio_evasion(model, x0, benign, cfg)
print(f"start decision {trace[0]:+.3f} -> final {trace[-1]:+.3f} "
      f"({'evaded' if sv.svm_decision(model, x_adv) <= 0 else 'still detected'})")
print(f"displacement {np.linalg.norm(x_adv - x0):.2f} (budget {cfg.d_max})")

# FGSM against a small MLP on heavily overlapping classes
mlp_data = synthesize_dataset("gaussians", 100, 0.8, np.random.default_rng(4),
                              mu=0.8)
mlp = mc.build_mlp([2, 8, 2], loss="cross_entropy", rng=np.random.default_rng(5))
params = mc.model_to_vector(mlp)
for _ in range(200):
    _, g = mc.loss_and_grad(mc.vector_to_model(params, mlp), mlp_data.X, mlp_data.y)
    params = mc.sgd_step(params, g, 0.5)
mlp = mc.vector_to_model(params, mlp)

for eps in (0.0, 0.1, 0.3, 0.5):
    flips = 0
    for i in range(len(mlp_data)):
        x_a = atk.fgsm(mlp, mlp_data.X[i], mlp_data.y[i], eps)
        flips += int(mc.forward(mlp, x_a[None, :]).argmax()) != mlp_data.y[i]
    print(f"FGSM eps={eps:.1f}: misclassification rate {flips / len(mlp_data):.2f}")
