"""Declarative experiment harness: INI configs in, JSON-lines metrics out.

A run composes one dataset, one model, at most one attack, and any number
of defenses. Validation is total: unknown sections, keys, or ill-typed
values fail before any computation. Identical (config, seed) pairs give
byte-identical metrics files.
"""

import configparser
import json
import os

import numpy as np

from . import attacks as atk
from . import datasets as ds
from . import dp as dpmod
from . import fed as fd
from . import inversion as inv
from . import model_core as mc
from . import svm as sv
from .paillier import FixedPointCodec, keygen
from .rng import component_rng, component_int_seed

__all__ = ["ExperimentConfig", "parse_config", "run_experiment", "write_metrics"]

_SCHEMA = {
    "run": {"seed"},
    "dataset": {"kind", "n", "noise", "n_classes", "path", "label_column"},
    "model": {"type", "dims", "activation", "loss", "kernel", "c", "gamma",
              "epochs", "lr"},
    "fed": {"rounds", "clients", "local_epochs", "local_batch", "lr",
            "aggregation", "fedprox_mu"},
    "dp": {"clip_norm", "noise_multiplier", "lot_size", "batch_size", "delta",
           "epochs", "lr"},
    "paillier": {"bits", "scale_bits"},
    "attack": {"name", "eps", "target_class", "lambda_mimicry", "d_max", "step",
               "max_iter", "rate", "scale", "mode", "variant", "seeds",
               "max_iters", "lr", "tv_weight", "n_shadows", "in_size",
               "poison_label", "stop_loss"},
    "defense": {"names", "k_fraction"},
    "output": {"metrics_path"},
}

_ATTACKS = {"inversion", "mpaf", "labelflip", "fgsm", "evasion", "poison",
            "membership"}
_DEFENSES = {"dp", "paillier", "sparse_topk"}


class ConfigError(ValueError):
    pass


class ExperimentConfig:
    """Validated view over an INI config; typed access per key."""

    def __init__(self, parser: configparser.ConfigParser):
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            for key in parser[section]:
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
        self._p = parser
        if "PRIVSEC_SEED" in os.environ:
            self.seed = int(os.environ["PRIVSEC_SEED"])
        else:
            if not parser.has_option("run", "seed"):
                raise ConfigError("[run] seed is mandatory")
            self.seed = self.getint("run", "seed")
        attack = self.get("attack", "name", None)
        if attack is not None and attack not in _ATTACKS:
            raise ConfigError(f"unknown attack {attack!r}")
        self.attack = attack
        names = self.get("defense", "names", "")
        self.defenses = [d for d in names.split(",") if d] if names else []
        for d in self.defenses:
            if d not in _DEFENSES:
                raise ConfigError(f"unknown defense {d!r}")

    def has(self, section):
        return self._p.has_section(section)

    def get(self, section, key, default=None):
        if self._p.has_option(section, key):
            return self._p.get(section, key)
        return default

    def _typed(self, cast, section, key, default):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}={raw!r} is ill-typed") from exc

    def getint(self, section, key, default=None):
        return self._typed(int, section, key, default)

    def getfloat(self, section, key, default=None):
        return self._typed(float, section, key, default)


def parse_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str.lower
    if not parser.read(path):
        raise ConfigError(f"cannot read config {path}")
    return ExperimentConfig(parser)


def _build_dataset(cfg: ExperimentConfig, rng):
    path = cfg.get("dataset", "path")
    if path:
        return ds.load_csv(path, cfg.get("dataset", "label_column", "label"))
    return ds.synthesize_dataset(
        cfg.get("dataset", "kind", "gaussians"),
        cfg.getint("dataset", "n", 100),
        cfg.getfloat("dataset", "noise", 0.5),
        rng,
        n_classes=cfg.getint("dataset", "n_classes", 2),
    )


def _build_mlp(cfg: ExperimentConfig, in_dim, n_classes, rng):
    dims_raw = cfg.get("model", "dims", "")
    hidden = [int(v) for v in dims_raw.split(",") if v] if dims_raw else []
    return mc.build_mlp(
        [in_dim, *hidden, n_classes],
        cfg.get("model", "activation", "tanh"),
        cfg.get("model", "loss", "cross_entropy"),
        rng,
    )


def _shards(dataset, k):
    idx = np.arange(len(dataset))
    return [
        mc.Dataset(dataset.X[idx[r::k]], dataset.y[idx[r::k]]) for r in range(k)
    ]


def _svm_params(cfg):
    return {
        "kernel": cfg.get("model", "kernel", "rbf"),
        "C": cfg.getfloat("model", "c", 10.0),
        "gamma": cfg.getfloat("model", "gamma", 1.0),
    }


def run_experiment(cfg: ExperimentConfig):
    """Yield MetricsRecord dicts for the configured run."""
    seed = cfg.seed
    data_rng = component_rng(seed, "dataset")
    dataset = _build_dataset(cfg, data_rng)
    n_classes = int(np.max(dataset.y)) + 1
    run_id = f"run{seed}"
    base = {"run_id": run_id, "seed": seed}

    if cfg.has("fed"):
        yield from _run_federated(cfg, dataset, n_classes, base)
    elif cfg.has("dp"):
        yield from _run_dpsgd(cfg, dataset, n_classes, base)
    elif cfg.attack in ("evasion", "poison"):
        yield from _run_svm_attack(cfg, dataset, base)
    else:
        yield from _run_centralized(cfg, dataset, n_classes, base)


def _run_federated(cfg, dataset, n_classes, base):
    seed = cfg.seed
    k = cfg.getint("fed", "clients", 2)
    fedcfg = fd.FedConfig(
        rounds=cfg.getint("fed", "rounds", 10),
        local_epochs=cfg.getint("fed", "local_epochs", 1),
        local_batch=cfg.getint("fed", "local_batch", 0),
        lr=cfg.getfloat("fed", "lr", 0.1),
        aggregation=cfg.get("fed", "aggregation", "delta"),
        fedprox_mu=cfg.getfloat("fed", "fedprox_mu", 0.0),
    )
    model = _build_mlp(cfg, dataset.X.shape[1], n_classes, component_rng(seed, "model"))
    if cfg.attack == "labelflip":
        rate = cfg.getfloat("attack", "rate", 0.5)
        flip_rng = component_rng(seed, "attack.labelflip")
        dataset = atk.label_flip(dataset, rate, flip_rng, n_classes)
    shards = _shards(dataset, k)

    hooks = fd.HookSet()
    if "sparse_topk" in cfg.defenses:
        hooks.client_transform.append(
            fd.sparse_topk_hook(cfg.getfloat("defense", "k_fraction", 0.1))
        )
    attack_log = None
    if cfg.attack == "inversion" and "paillier" not in cfg.defenses:
        icfg = inv.InversionConfig(
            variant=cfg.get("attack", "variant", "idlg"),
            max_iters=cfg.getint("attack", "max_iters", 2000),
            lr=cfg.getfloat("attack", "lr", 0.1),
            tv_weight=cfg.getfloat("attack", "tv_weight", 0.0),
            seeds=tuple(range(cfg.getint("attack", "seeds", 3))),
            stop_loss=cfg.getfloat("attack", "stop_loss", 1e-14),
        )
        hook, attack_log = inv.inversion_server_hook(icfg, model)
        hooks.pre_aggregate.append(hook)
    if cfg.attack == "mpaf":
        target = mc.model_to_vector(
            _build_mlp(cfg, dataset.X.shape[1], n_classes, component_rng(seed, "mpaf.target"))
        )
        hooks.client_transform.append(
            atk.mpaf_client_hook(target, cfg.getfloat("attack", "scale", 1.0),
                                 cfg.get("attack", "mode", "target"))
        )

    if "paillier" in cfg.defenses:
        import random as _random

        key_rng = _random.Random(component_int_seed(cfg.seed, "paillier.keygen"))
        pk, sk = keygen(cfg.getint("paillier", "bits", 512), key_rng)
        codec = FixedPointCodec(pk.n, cfg.getint("paillier", "scale_bits", 32))
        final, metrics = fd.run_federation_paillier(model, shards, fedcfg, pk, sk,
                                                    codec, master_seed=seed)
        if cfg.attack == "inversion":
            # the server only ever saw ciphertexts: no gradients to invert
            for rnd in range(fedcfg.rounds):
                for rank in range(1, k + 1):
                    yield dict(base, kind="inversion", round=rnd, rank=rank,
                               match_loss=None, success=False)
    else:
        final, metrics = fd.run_federation(model, shards, fedcfg, hooks,
                                           master_seed=seed)
    for m in metrics:
        yield dict(base, kind="round", **m)
    if attack_log is not None:
        for rec in attack_log:
            res = rec.get("result")
            yield dict(base, kind="inversion", round=rec["round"], rank=rec["rank"],
                       match_loss=None if res is None else res.final_match_loss,
                       success=res is not None)
    loss, _ = mc.loss_and_grad(final, dataset.X, dataset.y)
    acc = float((mc.forward(final, dataset.X).argmax(axis=1) == dataset.y).mean())
    yield dict(base, kind="final", loss=loss, accuracy=acc)


def _run_dpsgd(cfg, dataset, n_classes, base):
    seed = cfg.seed
    model = _build_mlp(cfg, dataset.X.shape[1], n_classes, component_rng(seed, "model"))
    dpcfg = dpmod.DpConfig(
        clip_norm=cfg.getfloat("dp", "clip_norm", 1.0),
        noise_multiplier=cfg.getfloat("dp", "noise_multiplier", 1.0),
        lot_size=cfg.getint("dp", "lot_size", 32),
        batch_size=cfg.getint("dp", "batch_size", 32),
        delta=cfg.getfloat("dp", "delta", 1e-5),
    )
    if dpcfg.lot_size > len(dataset):
        raise ConfigError("dp lot_size exceeds dataset size")
    trained, ledger = dpmod.dpsgd_train(
        model, dataset, dpcfg, cfg.getint("dp", "epochs", 5),
        cfg.getfloat("dp", "lr", 0.1), component_rng(seed, "dpsgd"),
    )
    loss, _ = mc.loss_and_grad(trained, dataset.X, dataset.y)
    acc = float((mc.forward(trained, dataset.X).argmax(axis=1) == dataset.y).mean())
    if dpcfg.noise_multiplier > 0:
        eps, lam = dpmod.get_epsilon_with_lambda(ledger, dpcfg.delta)
    else:
        eps, lam = float("inf"), 0
    yield dict(base, kind="final", loss=loss, accuracy=acc, epsilon=eps,
               delta=dpcfg.delta, steps=ledger.steps, argmin_lambda=lam)


def _run_centralized(cfg, dataset, n_classes, base):
    seed = cfg.seed
    model = _build_mlp(cfg, dataset.X.shape[1], n_classes, component_rng(seed, "model"))
    params = mc.model_to_vector(model)
    lr = cfg.getfloat("model", "lr", 0.5)
    for epoch in range(cfg.getint("model", "epochs", 100)):
        current = mc.vector_to_model(params, model)
        loss, g = mc.loss_and_grad(current, dataset.X, dataset.y)
        params = mc.sgd_step(params, g, lr)
        if epoch % 10 == 0:
            yield dict(base, kind="epoch", epoch=epoch, loss=loss)
    trained = mc.vector_to_model(params, model)
    loss, _ = mc.loss_and_grad(trained, dataset.X, dataset.y)
    acc = float((mc.forward(trained, dataset.X).argmax(axis=1) == dataset.y).mean())
    yield dict(base, kind="final", loss=loss, accuracy=acc)

    if cfg.attack == "fgsm":
        eps = cfg.getfloat("attack", "eps", 0.3)
        flipped = 0
        for i in range(len(dataset)):
            x_adv = atk.fgsm(trained, dataset.X[i], dataset.y[i], eps)
            pred = int(mc.forward(trained, x_adv[None, :]).argmax())
            flipped += pred != dataset.y[i]
        yield dict(base, kind="fgsm", eps=eps,
                   flip_rate=flipped / len(dataset))
    elif cfg.attack == "membership":
        rng = component_rng(seed, "membership")
        half = len(dataset) // 4
        member = mc.Dataset(dataset.X[:half], dataset.y[:half])
        nonmember = mc.Dataset(dataset.X[half : 2 * half], dataset.y[half : 2 * half])
        pop = mc.Dataset(dataset.X[2 * half :], dataset.y[2 * half :])
        mcfg = atk.MembershipConfig(
            n_shadows=cfg.getint("attack", "n_shadows", 4),
            in_size=cfg.getint("attack", "in_size", 20),
        )
        _, auc = atk.membership_attack(trained, pop, member, nonmember, mcfg, rng)
        yield dict(base, kind="membership", auc=auc)


def _run_svm_attack(cfg, dataset, base):
    seed = cfg.seed
    data = ds.to_pm1(dataset)
    half = len(data) // 2
    train = mc.Dataset(data.X[:half], data.y[:half])
    valid = mc.Dataset(data.X[half:], data.y[half:])
    params = _svm_params(cfg)
    model = sv.train_svm(train, rng=np.random.default_rng(seed), **params)
    acc = float((np.sign(sv.svm_decision(model, valid.X)) == valid.y).mean())
    yield dict(base, kind="final", accuracy=acc)
    if cfg.attack == "evasion":
        ecfg = atk.EvasionConfig(
            lambda_mimicry=cfg.getfloat("attack", "lambda_mimicry", 0.0),
            d_max=cfg.getfloat("attack", "d_max", 3.0),
            step=cfg.getfloat("attack", "step", 0.1),
            max_iter=cfg.getint("attack", "max_iter", 100),
        )
        pos = train.X[train.y > 0]
        neg = train.X[train.y < 0]
        x0 = pos[0]
        x_adv, trace = atk.biggio_evasion(model, x0, neg, ecfg)
        yield dict(base, kind="evasion", start_decision=trace[0],
                   final_decision=trace[-1],
                   evaded=bool(sv.svm_decision(model, x_adv) < 0))
    else:
        pcfg = atk.PoisonConfig(
            step=cfg.getfloat("attack", "step", 0.3),
            max_iter=cfg.getint("attack", "max_iter", 10),
        )
        y_c = cfg.getint("attack", "poison_label", 1)
        x0 = train.X[train.y == -y_c][0]
        res = atk.svm_poison_point(train, valid, params, x0, y_c, pcfg)
        poisoned = sv.train_svm(
            mc.Dataset(np.vstack([train.X, res.x_poison[None, :]]),
                       np.concatenate([train.y, [y_c]])),
            rng=np.random.default_rng(0), **params)
        acc_p = float((np.sign(sv.svm_decision(poisoned, valid.X)) == valid.y).mean())
        yield dict(base, kind="poison", initial_loss=res.trace[0],
                   final_loss=res.trace[-1], improved=res.improved,
                   clean_accuracy=acc, poisoned_accuracy=acc_p)


def write_metrics(records, path):
    """One sorted-key JSON object per line, then a summary line."""
    count = 0
    last = None
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            count += 1
            if rec.get("kind") == "final":
                last = rec
        summary = {"summary": True, "n_records": count}
        if last is not None:
            summary["final"] = last
        fh.write(json.dumps(summary, sort_keys=True) + "\n")
