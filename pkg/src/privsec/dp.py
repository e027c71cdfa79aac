"""Differentially private SGD and a moments accountant.

The training loop clips per-example gradients and adds Gaussian noise once
per lot; the accountant accumulates log-moments of the sampled Gaussian
mechanism over an integer order grid and converts them to (epsilon, delta).
"""

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from . import model_core as mc

__all__ = [
    "DpConfig",
    "PrivacyLedger",
    "clip_grads",
    "noisy_lot_grad",
    "log_moment_increment",
    "accountant_step",
    "get_epsilon",
    "get_epsilon_with_lambda",
    "dpsgd_train",
]

DEFAULT_LAMBDA_MAX = 64


@dataclass
class DpConfig:
    clip_norm: float = 1.0
    noise_multiplier: float = 1.0
    lot_size: int = 32
    batch_size: int = 32
    delta: float = 1e-5

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be non-negative")
        if self.batch_size > self.lot_size:
            raise ValueError("batch_size must not exceed lot_size")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


@dataclass
class PrivacyLedger:
    """Accumulated log-moments alpha(lambda) for lambda = 1..lambda_max."""

    lambda_max: int = DEFAULT_LAMBDA_MAX
    log_moments: np.ndarray = None
    steps: int = 0
    q: float = 0.0

    def __post_init__(self):
        if self.log_moments is None:
            self.log_moments = np.zeros(self.lambda_max)
        self.log_moments = np.asarray(self.log_moments, dtype=np.float64)


def clip_grads(grads, clip_norm):
    """Rescale each gradient to L2 norm at most clip_norm."""
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    out = []
    for g in grads:
        clipped = g.scale(1.0 / max(1.0, g.norm() / clip_norm))
        # rounding in the rescale can overshoot by an ulp; walk it back
        while clipped.norm() > clip_norm:
            clipped = clipped.scale(clip_norm / clipped.norm())
        out.append(clipped)
    return out


def noisy_lot_grad(grads, clip_norm, noise_multiplier, rng, lot_size=None):
    """(sum of clipped gradients + N(0, (sigma*C)^2 I)) / lot size."""
    if not grads:
        raise ValueError("empty lot")
    L = lot_size if lot_size is not None else len(grads)
    clipped = clip_grads(grads, clip_norm)
    total = clipped[0].copy()
    for g in clipped[1:]:
        total = total + g
    if noise_multiplier > 0:
        noise = rng.normal(0.0, noise_multiplier * clip_norm, size=len(total))
        total = mc.ParamVector(total.values + noise, total.layout)
    return total.scale(1.0 / L)


def _log_trapz(log_f, dx):
    """log of the trapezoidal integral of exp(log_f) on a uniform grid."""
    w = np.zeros_like(log_f)
    w[0] = w[-1] = math.log(0.5)
    m = log_f + w
    peak = m.max()
    return peak + math.log(np.exp(m - peak).sum()) + math.log(dx)


# per-step log-moments depend only on (q, sigma, lam); T steps just add T
# copies, so cache the quadrature instead of redoing it every step
@functools.lru_cache(maxsize=4096)
def log_moment_increment(q, sigma, lam, step_scale=1.0):
    """Log-moment of one sampled-Gaussian step at integer order lam.

    The mixture mu = (1-q) N(0, sigma^2) + q N(1, sigma^2) is integrated
    against both direction of the privacy-loss moments on a uniform grid
    (half-width 12*sigma + 12, step 1e-3*sigma*step_scale), all in
    log-space. q == 1 uses the closed form lam*(lam+1)/(2*sigma^2).
    """
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    if sigma <= 0:
        raise ValueError("sigma must be positive for a finite moment")
    if q == 1.0:
        return lam * (lam + 1) / (2.0 * sigma * sigma)
    half = 12.0 * sigma + 12.0
    dx = 1e-3 * sigma * step_scale
    z = np.arange(-half, half + dx, dx)
    log_norm = -math.log(sigma * math.sqrt(2.0 * math.pi))
    log_mu0 = -(z ** 2) / (2.0 * sigma ** 2) + log_norm
    log_mu1 = -((z - 1.0) ** 2) / (2.0 * sigma ** 2) + log_norm
    log_mu = np.logaddexp(math.log1p(-q) + log_mu0, math.log(q) + log_mu1)
    log_e1 = _log_trapz(log_mu + lam * (log_mu - log_mu0), dx)
    log_e2 = _log_trapz(log_mu0 + lam * (log_mu0 - log_mu), dx)
    return max(log_e1, log_e2)


def accountant_step(ledger: PrivacyLedger, q, sigma) -> PrivacyLedger:
    """Ledger advanced by one lot at sampling rate q and noise sigma."""
    inc = np.array(
        [log_moment_increment(q, sigma, lam) for lam in range(1, ledger.lambda_max + 1)]
    )
    return PrivacyLedger(
        ledger.lambda_max, ledger.log_moments + inc, ledger.steps + 1, q
    )


def get_epsilon_with_lambda(ledger: PrivacyLedger, delta):
    """(epsilon, argmin lambda) via eps = min_lam (alpha(lam) - ln delta)/lam."""
    if ledger.steps == 0:
        raise ValueError("empty ledger")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    lams = np.arange(1, ledger.lambda_max + 1)
    eps = (ledger.log_moments - math.log(delta)) / lams
    idx = int(np.argmin(eps))
    return float(eps[idx]), int(lams[idx])


def get_epsilon(ledger: PrivacyLedger, delta) -> float:
    return get_epsilon_with_lambda(ledger, delta)[0]


def dpsgd_train(model, dataset, cfg: DpConfig, epochs, lr, rng,
                lambda_max=DEFAULT_LAMBDA_MAX):
    """DPSGD: shuffle-and-partition lots, one noisy update per lot.

    Inner batches of cfg.batch_size partition each lot for gradient
    computation; the ledger advances once per lot with q = lot_size / n.
    Returns (trained model, ledger).
    """
    n = len(dataset)
    L = cfg.lot_size
    if L > n:
        raise ValueError("lot_size exceeds dataset size")
    q = L / n
    params = mc.model_to_vector(model)
    ledger = PrivacyLedger(lambda_max)
    sigma = cfg.noise_multiplier
    for _ in range(epochs):
        order = rng.permutation(n)
        for lot_start in range(0, n - L + 1, L):
            lot = order[lot_start : lot_start + L]
            current = mc.vector_to_model(params, model)
            grads = []
            for b in range(0, L, cfg.batch_size):
                idx = lot[b : b + cfg.batch_size]
                grads.extend(mc.per_example_grads(current, dataset.X[idx], dataset.y[idx]))
            update = noisy_lot_grad(grads, cfg.clip_norm, sigma, rng, lot_size=L)
            params = mc.sgd_step(params, update, lr)
            if sigma > 0:
                ledger = accountant_step(ledger, q, sigma)
            else:
                # no noise means no privacy: pin every moment at +inf
                ledger = PrivacyLedger(
                    lambda_max, np.full(lambda_max, np.inf), ledger.steps + 1, q
                )
    return mc.vector_to_model(params, model), ledger
