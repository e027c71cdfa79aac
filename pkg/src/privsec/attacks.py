"""Training-time and test-time attacks: FGSM, SVM evasion and poisoning,
label flipping, fake-client model poisoning, and shadow-model membership
inference.

Every attack returns a structured trace so experiments can plot and assert
progress, mirroring the “log” convention of the evasion/poisoning APIs.
"""

from dataclasses import dataclass, field

import numpy as np

from . import model_core as mc
from . import svm as sv

__all__ = [
    "EvasionConfig",
    "PoisonConfig",
    "MembershipConfig",
    "fgsm",
    "biggio_evasion",
    "svm_poison_point",
    "PoisonResult",
    "label_flip",
    "mpaf_client_hook",
    "membership_attack",
    "roc_auc",
]


def _clip_box(x, bounds):
    if bounds is None:
        return x
    bounds = np.asarray(bounds, dtype=np.float64)
    return np.clip(x, bounds[:, 0], bounds[:, 1])


# ---------------------------------------------------------------------------
# Evasion
# ---------------------------------------------------------------------------


@dataclass
class EvasionConfig:
    lambda_mimicry: float = 0.0  # pull toward the benign density estimate
    d_max: float = 1.0           # max L2 displacement from the start point
    step: float = 0.05
    max_iter: int = 200
    bounds: np.ndarray | None = None  # (d, 2) feature box


def fgsm(model, x, y, eps, bounds=None):
    """x + eps * sign of the input-loss gradient, clipped to the box."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    x = np.asarray(x, dtype=np.float64).ravel()
    g = mc.input_grad(model, x, np.atleast_1d(y))
    return _clip_box(x + eps * np.sign(g), bounds)


def _project_ball(x, center, radius):
    d = x - center
    norm = np.linalg.norm(d)
    if norm > radius:
        x = center + d * (radius / norm) if norm > 0 else center.copy()
    return x


def biggio_evasion(svm_model, x0, benign_samples, cfg: EvasionConfig):
    """Gradient-descent evasion of a kernel SVM.

    Descends F(x) = decision(x) - (lambda/|B|) * sum_b k_rbf(x, b) with
    projection onto the L2 ball of radius d_max around x0 (and the feature
    box). The mimicry kernel reuses the SVM's own gamma. Returns the best
    iterate and the running-best trace of F.
    """
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    if sv.svm_decision(svm_model, x0) <= 0:
        raise ValueError("starting point is already classified benign")
    benign = np.atleast_2d(np.asarray(benign_samples, dtype=np.float64))
    gamma = svm_model.gamma
    lam = cfg.lambda_mimicry / max(1, len(benign))

    def F_and_grad(x):
        f = sv.svm_decision(svm_model, x)
        g = sv.svm_input_grad(svm_model, x)
        if lam > 0:
            diff = x[None, :] - benign
            k = np.exp(-gamma * (diff * diff).sum(axis=1))
            f -= lam * k.sum()
            g = g - lam * (-2.0 * gamma) * (k @ diff)
        return f, g

    x = x0.copy()
    best_x = x0.copy()
    best_f, _ = F_and_grad(x0)
    trace = [best_f]
    for _ in range(cfg.max_iter):
        _, g = F_and_grad(x)
        norm = np.linalg.norm(g)
        if norm == 0:
            break
        x = x - cfg.step * g / norm
        x = _clip_box(_project_ball(x, x0, cfg.d_max), cfg.bounds)
        f, _ = F_and_grad(x)
        if f < best_f:
            best_f = f
            best_x = x.copy()
        trace.append(best_f)
    return best_x, trace


# ---------------------------------------------------------------------------
# Poisoning
# ---------------------------------------------------------------------------


@dataclass
class PoisonConfig:
    step: float = 0.1
    max_iter: int = 20
    fd_step: float = 1e-3
    bounds: np.ndarray | None = None


@dataclass
class PoisonResult:
    x_poison: np.ndarray
    trace: list
    improved: bool


def _retrain_valid_loss(train, valid, svm_params, x, y_c):
    X = np.vstack([train.X, x[None, :]])
    y = np.concatenate([np.asarray(train.y, dtype=np.float64), [y_c]])
    model = sv.train_svm(mc.Dataset(X, y), rng=np.random.default_rng(0), **svm_params)
    return sv.hinge_loss(model, valid.X, valid.y)


def svm_poison_point(train, valid, svm_params, x0, y_c, cfg: PoisonConfig):
    """Craft one poison point that maximizes validation hinge loss.

    Each iteration takes a central finite-difference gradient of the
    validation loss through a full SVM retrain per coordinate, then only
    accepts the step if the loss strictly increases; the accepted-loss
    trace is therefore strictly increasing.
    """
    if y_c not in (-1, 1):
        raise ValueError("poison label must be -1 or +1")
    x = _clip_box(np.asarray(x0, dtype=np.float64).ravel().copy(), cfg.bounds)
    d = x.size
    loss = _retrain_valid_loss(train, valid, svm_params, x, y_c)
    trace = [loss]
    improved = False
    if cfg.step == 0:
        return PoisonResult(x, trace, improved)
    for _ in range(cfg.max_iter):
        grad = np.zeros(d)
        for i in range(d):
            e = np.zeros(d)
            e[i] = cfg.fd_step
            lp = _retrain_valid_loss(train, valid, svm_params, x + e, y_c)
            lm = _retrain_valid_loss(train, valid, svm_params, x - e, y_c)
            grad[i] = (lp - lm) / (2.0 * cfg.fd_step)
        norm = np.linalg.norm(grad)
        if norm == 0:
            break
        cand = _clip_box(x + cfg.step * grad / norm, cfg.bounds)
        cand_loss = _retrain_valid_loss(train, valid, svm_params, cand, y_c)
        if cand_loss > loss:
            x, loss = cand, cand_loss
            trace.append(loss)
            improved = True
    return PoisonResult(x, trace, improved)


def label_flip(dataset, rate, rng, n_classes=None):
    """Flip floor(rate * n) labels sampled without replacement.

    Integer labels advance by one modulo the class count; {-1, +1} labels
    are sign-flipped.
    """
    if not 0 <= rate <= 1:
        raise ValueError("rate must lie in [0, 1]")
    y = np.asarray(dataset.y).copy()
    n = len(y)
    n_flip = int(np.floor(rate * n))
    idx = rng.choice(n, size=n_flip, replace=False)
    values = set(np.unique(y).tolist())
    if values <= {-1, 1}:
        y[idx] = -y[idx]
    else:
        k = n_classes if n_classes is not None else int(y.max()) + 1
        y[idx] = (y[idx] + 1) % k
    return mc.Dataset(dataset.X.copy(), y, dataset.bounds)


# ---------------------------------------------------------------------------
# Model poisoning via fake clients
# ---------------------------------------------------------------------------


def mpaf_client_hook(w_target: mc.ParamVector, scale: float, mode="target"):
    """Fake-client update hook.

    "target" mode sends scale * (w_target - w_global); "history" mode
    replays the client's previous-round update (zero on the first round).
    Delta aggregation only.
    """
    if mode not in ("target", "history"):
        raise ValueError("mode must be 'target' or 'history'")
    previous = {"update": None}

    def hook(update, ctx):
        if mode == "history":
            prev = previous["update"]
            fake = prev if prev is not None else update.scale(0.0)
            previous["update"] = update.copy()
            return fake
        return mc.ParamVector(
            scale * (w_target.values - ctx["global"].values), update.layout
        )

    return hook


# ---------------------------------------------------------------------------
# Membership inference
# ---------------------------------------------------------------------------


@dataclass
class MembershipConfig:
    n_shadows: int = 4
    shadow_dims: tuple = ()      # hidden dims; () mirrors a linear victim
    shadow_epochs: int = 200
    shadow_lr: float = 0.5
    in_size: int = 50            # per-shadow member/non-member split size
    attack_epochs: int = 300
    attack_lr: float = 0.5


def _train_mlp(dims, X, y, epochs, lr, rng):
    model = mc.build_mlp(dims, "tanh", "cross_entropy", rng)
    params = mc.model_to_vector(model)
    for _ in range(epochs):
        current = mc.vector_to_model(params, model)
        _, g = mc.loss_and_grad(current, X, y)
        params = mc.sgd_step(params, g, lr)
    return mc.vector_to_model(params, model)


def _attack_features(model, X, y):
    """Sorted confidence vector plus true-class confidence and correctness."""
    p = mc.softmax(mc.forward(model, X))
    idx = np.arange(len(y))
    p_true = p[idx, y]
    correct = (p.argmax(axis=1) == y).astype(np.float64)
    return np.column_stack([np.sort(p, axis=1)[:, ::-1], p_true, correct])


def _train_logistic(X, y01, epochs, lr):
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(epochs):
        z = X @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        r = p - y01
        w -= lr * (X.T @ r) / len(y01)
        b -= lr * float(r.mean())
    return w, b


def roc_auc(scores, labels):
    """Rank-statistic AUC with tie correction."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    order = np.argsort(scores)
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return (ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def membership_attack(victim, population, member_set, nonmember_set,
                      cfg: MembershipConfig, rng):
    """Shadow-model membership inference against a classifier.

    Shadow models (same architecture family as the victim) are trained on
    disjoint "in" splits of the population; one binary logistic attack
    model per class learns member vs non-member from confidence features.
    Returns (per-class attack models, AUC on the victim's true sets).
    """
    n_classes = victim.output_dim
    need = cfg.n_shadows * 2 * cfg.in_size
    if len(population) < need:
        raise ValueError(f"population too small: need {need} rows")
    order = rng.permutation(len(population))
    feats = []
    members = []
    labels = []
    dims = (victim.input_dim, *cfg.shadow_dims, n_classes)
    for s in range(cfg.n_shadows):
        lo = s * 2 * cfg.in_size
        in_idx = order[lo : lo + cfg.in_size]
        out_idx = order[lo + cfg.in_size : lo + 2 * cfg.in_size]
        shadow = _train_mlp(dims, population.X[in_idx], population.y[in_idx],
                            cfg.shadow_epochs, cfg.shadow_lr, rng)
        for idx, flag in ((in_idx, 1.0), (out_idx, 0.0)):
            y = np.asarray(population.y[idx], dtype=np.intp)
            feats.append(_attack_features(shadow, population.X[idx], y))
            members.append(np.full(len(idx), flag))
            labels.append(y)
    feats = np.vstack(feats)
    members = np.concatenate(members)
    labels = np.concatenate(labels)

    attack_models = {}
    for cls in range(n_classes):
        mask = labels == cls
        if mask.sum() == 0 or len(np.unique(members[mask])) < 2:
            attack_models[cls] = (np.zeros(feats.shape[1]), 0.0)
            continue
        attack_models[cls] = _train_logistic(feats[mask], members[mask],
                                             cfg.attack_epochs, cfg.attack_lr)

    scores = []
    truth = []
    for ds, flag in ((member_set, 1), (nonmember_set, 0)):
        y = np.asarray(ds.y, dtype=np.intp)
        f = _attack_features(victim, ds.X, y)
        for i in range(len(y)):
            w, b = attack_models[int(y[i])]
            scores.append(float(f[i] @ w + b))
            truth.append(flag)
    return attack_models, roc_auc(scores, truth)
