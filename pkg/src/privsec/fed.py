"""FedAVG/FedProx protocol engine with attachable hooks.

The server broadcasts the global parameter vector, clients run local SGD
and return sample-weighted updates (weight deltas by default), and the
server applies the weighted mean. Hooks observe or rewrite updates on
either side; identity hooks leave runs bit-identical. Reduction order is
always client rank order, so runs are reproducible.
"""

from dataclasses import dataclass, field

import numpy as np

from . import model_core as mc
from . import paillier as pl
from .rng import component_rng

__all__ = [
    "FedConfig",
    "HookSet",
    "ClientUpdate",
    "client_local_update",
    "server_aggregate",
    "apply_aggregate",
    "run_federation",
    "sparse_topk_hook",
    "paillier_client_hook",
    "paillier_server_aggregate",
    "run_federation_paillier",
    "client_stream",
]

WEIGHT_DENOM_BITS = 16  # weights quantized to integers over 2^16 under encryption


@dataclass
class FedConfig:
    rounds: int = 10
    local_epochs: int = 1
    local_batch: int = 0  # 0 means full batch
    lr: float = 0.1
    aggregation: str = "delta"  # "delta" (weight deltas) | "params" (raw weights)
    fedprox_mu: float = 0.0

    def __post_init__(self):
        if self.aggregation not in ("delta", "params"):
            raise ValueError("aggregation must be 'delta' or 'params'")
        if self.fedprox_mu < 0:
            raise ValueError("fedprox_mu must be non-negative")


@dataclass
class ClientUpdate:
    vector: mc.ParamVector
    n_samples: int
    rank: int


@dataclass
class HookSet:
    pre_aggregate: list = field(default_factory=list)   # (updates, ctx) -> updates
    post_aggregate: list = field(default_factory=list)  # (vector, ctx) -> vector
    client_transform: list = field(default_factory=list)  # (update, ctx) -> update


def client_stream(master_seed: int, rank: int) -> np.random.Generator:
    """The per-client RNG stream; shared by all transports."""
    return component_rng(master_seed, f"fed.client.{rank}")


def client_local_update(global_vec, template, shard, cfg: FedConfig, rng):
    """E local epochs of minibatch SGD from the global parameters.

    With fedprox_mu > 0 each gradient gains mu * (w - w_global). Returns
    (update vector, shard size); the update is w_local - w_global in delta
    mode and w_local in params mode.
    """
    if len(shard) == 0:
        raise ValueError("empty client shard")
    n = len(shard)
    B = cfg.local_batch if cfg.local_batch > 0 else n
    params = global_vec.copy()
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n) if B < n else np.arange(n)
        for start in range(0, n, B):
            idx = order[start : start + B]
            model = mc.vector_to_model(params, template)
            _, grad = mc.loss_and_grad(model, shard.X[idx], shard.y[idx])
            if cfg.fedprox_mu > 0:
                grad = mc.ParamVector(
                    grad.values + cfg.fedprox_mu * (params.values - global_vec.values),
                    grad.layout,
                )
            params = mc.sgd_step(params, grad, cfg.lr)
    update = params - global_vec if cfg.aggregation == "delta" else params
    return update, n


def server_aggregate(updates, hooks: HookSet, ctx=None):
    """Sample-weighted mean of client updates, with hooks around it."""
    if not updates:
        raise ValueError("no updates to aggregate")
    ctx = ctx or {}
    updates = sorted(updates, key=lambda u: u.rank)
    layout = updates[0].vector.layout
    if any(u.vector.layout != layout for u in updates):
        raise ValueError("ParamVector layout mismatch across updates")
    for hook in hooks.pre_aggregate:
        updates = hook(updates, ctx)
    total = sum(u.n_samples for u in updates)
    agg = mc.ParamVector(np.zeros(len(updates[0].vector)), layout)
    for u in updates:
        agg = agg + u.vector.scale(u.n_samples / total)
    for hook in hooks.post_aggregate:
        agg = hook(agg, ctx)
    return agg


def apply_aggregate(global_vec, agg, cfg: FedConfig):
    return global_vec + agg if cfg.aggregation == "delta" else agg.copy()


def _apply_client_hooks(update, hooks, ctx):
    for hook in hooks.client_transform:
        update = hook(update, ctx)
    return update


def run_federation(server_model, client_shards, cfg: FedConfig, hooks=None,
                   master_seed=0):
    """Synchronous in-process federation. Returns (model, round metrics)."""
    hooks = hooks or HookSet()
    template = server_model
    global_vec = mc.model_to_vector(server_model)
    ranks = list(range(1, len(client_shards) + 1))
    rngs = {rank: client_stream(master_seed, rank) for rank in ranks}
    metrics = []
    for rnd in range(cfg.rounds):
        updates = []
        for rank, shard in zip(ranks, client_shards):
            ctx = {
                "round": rnd,
                "rank": rank,
                "global": global_vec,
                "lr": cfg.lr,
                "config": cfg,
            }
            vec, n = client_local_update(global_vec, template, shard, cfg, rngs[rank])
            vec = _apply_client_hooks(vec, hooks, ctx)
            updates.append(ClientUpdate(vec, n, rank))
        ctx = {"round": rnd, "global": global_vec, "lr": cfg.lr, "config": cfg}
        agg = server_aggregate(updates, hooks, ctx)
        global_vec = apply_aggregate(global_vec, agg, cfg)
        metrics.append(_round_metrics(rnd, global_vec, template, client_shards))
    return mc.vector_to_model(global_vec, template), metrics


def _round_metrics(rnd, global_vec, template, shards):
    model = mc.vector_to_model(global_vec, template)
    X = np.vstack([s.X for s in shards])
    y = np.concatenate([np.asarray(s.y) for s in shards])
    loss, _ = mc.loss_and_grad(model, X, y)
    return {"round": rnd, "global_loss": loss}


def sparse_topk_hook(k_fraction: float):
    """Client hook keeping only the top ceil(k*d) coordinates by magnitude."""
    if not 0 < k_fraction <= 1:
        raise ValueError("k_fraction must lie in (0, 1]")

    def hook(update, ctx):
        d = len(update)
        k = int(np.ceil(k_fraction * d))
        if k >= d:
            return update
        # ties broken toward the lower index: sort by (-|v|, index)
        order = np.lexsort((np.arange(d), -np.abs(update.values)))
        keep = order[:k]
        values = np.zeros(d)
        values[keep] = update.values[keep]
        return mc.ParamVector(values, update.layout)

    return hook


# ---------------------------------------------------------------------------
# Paillier-encrypted federation. Clients hold the keypair; the server only
# ever touches ciphertexts (it has no decryption capability at all).
# ---------------------------------------------------------------------------


def paillier_client_hook(pk, codec, rng):
    """Client-side encryption of an update into a ciphertext list."""

    def hook(update, ctx):
        return [pl.encrypt(pk, m, rng) for m in pl.encode_vec(codec, update.values)]

    return hook


def quantize_weights(counts, denom_bits=WEIGHT_DENOM_BITS):
    """Integer client weights q_k ~ w_k * 2^denom_bits (renormalized later)."""
    total = sum(counts)
    return [max(1, round(c / total * (1 << denom_bits))) for c in counts]


def paillier_server_aggregate(enc_updates, pk, int_weights):
    """Homomorphic weighted sum: sum_k q_k (x) Enc(update_k), coordinatewise.

    Works purely on ciphertexts; decryption happens client-side.
    """
    if not enc_updates:
        raise ValueError("no encrypted updates")
    agg = None
    for ciphers, q in zip(enc_updates, int_weights):
        weighted = [pl.mul_plain(pk, c, q) for c in ciphers]
        if agg is None:
            agg = weighted
        else:
            if len(weighted) != len(agg):
                raise ValueError("encrypted update length mismatch")
            agg = [pl.add_cipher(pk, a, w) for a, w in zip(agg, weighted)]
    return agg


def client_decrypt_aggregate(agg_ciphers, pk, sk, codec, int_weights):
    """Decrypt the weighted sum and renormalize by the integer weight total."""
    total_q = sum(int_weights)
    raw = pl.decode_vec(codec, [pl.decrypt(sk, pk, c) for c in agg_ciphers])
    return raw / total_q


def run_federation_paillier(server_model, client_shards, cfg: FedConfig,
                            pk, sk, codec, master_seed=0):
    """Federation where updates travel encrypted (Code-5-style flow).

    Every client holds the shared keypair and a synchronized copy of the
    global model; the server aggregates ciphertexts and broadcasts the
    encrypted weighted sum, which clients decrypt and apply locally.
    Delta aggregation only (ciphertexts carry deltas).
    """
    if cfg.aggregation != "delta":
        raise ValueError("encrypted federation requires delta aggregation")
    template = server_model
    global_vec = mc.model_to_vector(server_model)
    ranks = list(range(1, len(client_shards) + 1))
    rngs = {rank: client_stream(master_seed, rank) for rank in ranks}
    import random as _random

    enc_rngs = {
        rank: _random.Random(int(component_rng(master_seed, f"paillier.client.{rank}").integers(0, 2**63)))
        for rank in ranks
    }
    counts = [len(s) for s in client_shards]
    int_weights = quantize_weights(counts)
    metrics = []
    for rnd in range(cfg.rounds):
        enc_updates = []
        for rank, shard in zip(ranks, client_shards):
            vec, _ = client_local_update(global_vec, template, shard, cfg, rngs[rank])
            hook = paillier_client_hook(pk, codec, enc_rngs[rank])
            enc_updates.append(hook(vec, {}))
        agg_ciphers = paillier_server_aggregate(enc_updates, pk, int_weights)
        delta = client_decrypt_aggregate(agg_ciphers, pk, sk, codec, int_weights)
        global_vec = mc.ParamVector(global_vec.values + delta, global_vec.layout)
        metrics.append(_round_metrics(rnd, global_vec, template, client_shards))
    return mc.vector_to_model(global_vec, template), metrics
