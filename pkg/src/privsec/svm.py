"""Kernel SVM trained with simplified SMO.

Desk-scale trainer (n up to a few hundred) that exposes the internals the
attack modules need: dual coefficients, support vectors, and the gradient
of the decision function w.r.t. the input.
"""

from dataclasses import dataclass

import numpy as np

from .model_core import Dataset

__all__ = ["SvmModel", "train_svm", "svm_decision", "svm_input_grad", "hinge_loss"]


@dataclass
class SvmModel:
    kernel: str  # "linear" | "rbf"
    gamma: float
    C: float
    alphas: np.ndarray  # dual coefficients of the support vectors (alpha > 0)
    support_x: np.ndarray
    support_y: np.ndarray
    bias: float


def _kernel_matrix(kernel, gamma, A, B):
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    if kernel == "linear":
        return A @ B.T
    if kernel == "rbf":
        sq = (
            (A * A).sum(axis=1)[:, None]
            + (B * B).sum(axis=1)[None, :]
            - 2.0 * (A @ B.T)
        )
        return np.exp(-gamma * np.maximum(sq, 0.0))
    raise ValueError(f"unknown kernel {kernel!r}")


def train_svm(data: Dataset, kernel="linear", C=1.0, gamma=1.0, tol=1e-4,
              max_passes=50, rng=None) -> SvmModel:
    """Simplified SMO with a random second-index heuristic.

    Labels must be in {-1, +1} with both classes present.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if C <= 0:
        raise ValueError("C must be positive")
    X = np.asarray(data.X, dtype=np.float64)
    y = np.asarray(data.y, dtype=np.float64).ravel()
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least 2 training points")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError("labels must be in {-1, +1}")
    if len(np.unique(y)) < 2:
        raise ValueError("training data contains a single class")

    K = _kernel_matrix(kernel, gamma, X, X)
    alpha = np.zeros(n)
    b = 0.0
    passes = 0
    while passes < max_passes:
        changed = 0
        for i in range(n):
            Ei = float(alpha * y @ K[:, i]) + b - y[i]
            if (y[i] * Ei < -tol and alpha[i] < C) or (y[i] * Ei > tol and alpha[i] > 0):
                j = int(rng.integers(0, n - 1))
                if j >= i:
                    j += 1
                Ej = float(alpha * y @ K[:, j]) + b - y[j]
                ai_old, aj_old = alpha[i], alpha[j]
                if y[i] != y[j]:
                    L, H = max(0.0, aj_old - ai_old), min(C, C + aj_old - ai_old)
                else:
                    L, H = max(0.0, ai_old + aj_old - C), min(C, ai_old + aj_old)
                if L >= H:
                    continue
                eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
                if eta >= 0:
                    continue
                aj = aj_old - y[j] * (Ei - Ej) / eta
                aj = min(H, max(L, aj))
                if abs(aj - aj_old) < 1e-7:
                    continue
                ai = ai_old + y[i] * y[j] * (aj_old - aj)
                alpha[i], alpha[j] = ai, aj
                b1 = b - Ei - y[i] * (ai - ai_old) * K[i, i] - y[j] * (aj - aj_old) * K[i, j]
                b2 = b - Ej - y[i] * (ai - ai_old) * K[i, j] - y[j] * (aj - aj_old) * K[j, j]
                if 0 < ai < C:
                    b = b1
                elif 0 < aj < C:
                    b = b2
                else:
                    b = 0.5 * (b1 + b2)
                changed += 1
        passes = passes + 1 if changed == 0 else 0

    sv = alpha > 0
    return SvmModel(kernel, gamma, C, alpha[sv].copy(), X[sv].copy(), y[sv].copy(), float(b))


def svm_decision(svm: SvmModel, x) -> np.ndarray:
    """Decision values sum_i alpha_i y_i k(x_i, x) + bias; scalar for one x."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    k = _kernel_matrix(svm.kernel, svm.gamma, np.atleast_2d(x), svm.support_x)
    vals = k @ (svm.alphas * svm.support_y) + svm.bias
    return float(vals[0]) if single else vals


def svm_input_grad(svm: SvmModel, x) -> np.ndarray:
    """Gradient of the decision function at x."""
    x = np.asarray(x, dtype=np.float64).ravel()
    coef = svm.alphas * svm.support_y
    if svm.kernel == "linear":
        return coef @ svm.support_x
    k = _kernel_matrix("rbf", svm.gamma, x[None, :], svm.support_x)[0]
    diff = x[None, :] - svm.support_x
    return (coef * k * (-2.0 * svm.gamma)) @ diff


def hinge_loss(svm: SvmModel, X, y) -> float:
    """Mean hinge loss max(0, 1 - y * f(x)) over a labelled set."""
    f = svm_decision(svm, np.atleast_2d(X))
    return float(np.maximum(0.0, 1.0 - np.asarray(y, dtype=np.float64) * f).mean())
