"""Command-line harness: `privsec <subcommand>`.

Subcommands: dataset gen, train, fed run, attack <name>, anonymize,
audit dp. Every command exits 0 on success and nonzero with a one-line
`error: ...` message otherwise. PRIVSEC_SEED overrides the config seed.
"""

import argparse
import csv
import json
import sys

import numpy as np

from . import experiment as xp
from . import mondrian as md
from .datasets import synthesize_dataset, save_csv
from .dp import PrivacyLedger, accountant_step, get_epsilon_with_lambda


def _cmd_dataset_gen(args):
    rng = np.random.default_rng(args.seed)
    data = synthesize_dataset(args.kind, args.n, args.noise, rng,
                              n_classes=args.n_classes)
    save_csv(data, args.out)
    print(f"wrote {len(data)} rows to {args.out}")


def _run_config(args):
    cfg = xp.parse_config(args.config)
    records = xp.run_experiment(cfg)
    out = args.metrics or cfg.get("output", "metrics_path", "metrics.jsonl")
    xp.write_metrics(records, out)
    print(f"metrics written to {out}")


def _cmd_fed_run(args):
    if args.role == "local":
        _run_config(args)
        return
    from . import fed as fd
    from . import model_core as mc
    from . import transport as tp
    from .rng import component_rng

    cfg = xp.parse_config(args.config)
    host, port = args.addr.rsplit(":", 1)
    dataset = xp._build_dataset(cfg, component_rng(cfg.seed, "dataset"))
    n_classes = int(np.max(dataset.y)) + 1
    model = xp._build_mlp(cfg, dataset.X.shape[1], n_classes,
                          component_rng(cfg.seed, "model"))
    k = cfg.getint("fed", "clients", 2)
    fedcfg = fd.FedConfig(
        rounds=cfg.getint("fed", "rounds", 10),
        local_epochs=cfg.getint("fed", "local_epochs", 1),
        local_batch=cfg.getint("fed", "local_batch", 0),
        lr=cfg.getfloat("fed", "lr", 0.1),
        aggregation=cfg.get("fed", "aggregation", "delta"),
        fedprox_mu=cfg.getfloat("fed", "fedprox_mu", 0.0),
    )
    if args.role == "server":
        final, metrics = tp.serve_federation(model, fedcfg, k, host, int(port))
        out = args.metrics or cfg.get("output", "metrics_path", "metrics.jsonl")
        def records():
            for m in metrics:
                yield {"run_id": f"run{cfg.seed}", "seed": cfg.seed,
                       "kind": "round", **m}
        xp.write_metrics(records(), out)
        print(f"federation finished; metrics written to {out}")
    else:
        shards = xp._shards(dataset, k)
        rank = tp.run_client(model, lambda r: shards[r - 1], fedcfg,
                             (host, int(port)), master_seed=cfg.seed)
        print(f"client rank {rank} finished")


def _cmd_attack(args):
    cfg = xp.parse_config(args.config)
    if cfg.attack != args.name:
        raise xp.ConfigError(
            f"config declares attack {cfg.attack!r}, command line says {args.name!r}"
        )
    records = list(xp.run_experiment(cfg))
    out = args.metrics or cfg.get("output", "metrics_path", "metrics.jsonl")
    xp.write_metrics(iter(records), out)
    if args.name == "inversion" and args.recon_dir:
        _dump_reconstructions(cfg, args.recon_dir)
    print(f"metrics written to {out}")


def _dump_reconstructions(cfg, recon_dir):
    """Re-run the federated inversion and dump x_hat matrices + JSON index."""
    import os

    from . import fed as fd
    from . import inversion as inv
    from . import model_core as mc
    from .rng import component_rng

    os.makedirs(recon_dir, exist_ok=True)
    dataset = xp._build_dataset(cfg, component_rng(cfg.seed, "dataset"))
    n_classes = int(np.max(dataset.y)) + 1
    model = xp._build_mlp(cfg, dataset.X.shape[1], n_classes,
                          component_rng(cfg.seed, "model"))
    k = cfg.getint("fed", "clients", 2)
    fedcfg = fd.FedConfig(
        rounds=cfg.getint("fed", "rounds", 1),
        local_epochs=cfg.getint("fed", "local_epochs", 1),
        local_batch=cfg.getint("fed", "local_batch", 0),
        lr=cfg.getfloat("fed", "lr", 0.1),
    )
    icfg = inv.InversionConfig(
        variant=cfg.get("attack", "variant", "idlg"),
        max_iters=cfg.getint("attack", "max_iters", 2000),
        seeds=tuple(range(cfg.getint("attack", "seeds", 3))),
        stop_loss=cfg.getfloat("attack", "stop_loss", 1e-14),
    )
    hook, log = inv.inversion_server_hook(icfg, model)
    hooks = fd.HookSet(pre_aggregate=[hook])
    shards = xp._shards(dataset, k)
    fd.run_federation(model, shards, fedcfg, hooks, master_seed=cfg.seed)
    index = []
    for i, rec in enumerate(log):
        res = rec.get("result")
        entry = {"round": rec["round"], "rank": rec["rank"]}
        if res is not None:
            fname = f"recon_{i:03d}.csv"
            np.savetxt(os.path.join(recon_dir, fname),
                       np.atleast_2d(res.x_hat), delimiter=",")
            entry.update(file=fname, seed=res.seed,
                         match_loss=res.final_match_loss)
            truth = shards[rec["rank"] - 1].X
            if truth.shape[0] == 1:
                entry["mse_vs_truth"] = float(((res.x_hat - truth[0]) ** 2).mean())
        else:
            entry["error"] = rec.get("error", "no reconstruction")
        index.append(entry)
    with open(os.path.join(recon_dir, "index.json"), "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)


def _cmd_anonymize(args):
    with open(args.input, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    columns = {name: [row[i] for row in rows] for i, name in enumerate(header)}
    qi = []
    for name in args.qi.split(","):
        col = columns.get(name)
        if col is None:
            raise ValueError(f"QI column {name!r} not in header")
        try:
            columns[name] = [float(v) for v in col]
            qi.append((name, "numeric"))
        except ValueError:
            qi.append((name, "categorical"))
    sensitive = args.sensitive.split(",") if args.sensitive else []
    table = md.QiTable(columns, qi, sensitive)
    anon = md.anonymize(table, args.k)
    if not md.verify_k_anonymity(anon, args.k):
        raise RuntimeError("k-anonymity verification failed")
    with open(args.output, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header + ["partition_id"])
        for i in range(len(anon)):
            writer.writerow([anon.columns[name][i] for name in header]
                            + [anon.partition_ids[i]])
    print(f"wrote {len(anon)} {args.k}-anonymous rows to {args.output}")


def _cmd_audit_dp(args):
    ledger = PrivacyLedger()
    for _ in range(args.steps):
        ledger = accountant_step(ledger, args.q, args.sigma)
    eps, lam = get_epsilon_with_lambda(ledger, args.delta)
    print(json.dumps({"epsilon": eps, "delta": args.delta, "T": args.steps,
                      "q": args.q, "sigma": args.sigma, "argmin_lambda": lam},
                     sort_keys=True))


def build_parser():
    p = argparse.ArgumentParser(prog="privsec")
    sub = p.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="dataset utilities")
    dsub = ds.add_subparsers(dest="subcommand", required=True)
    gen = dsub.add_parser("gen", help="synthesize a dataset CSV")
    gen.add_argument("--kind", default="gaussians")
    gen.add_argument("--n", type=int, default=100)
    gen.add_argument("--noise", type=float, default=0.5)
    gen.add_argument("--n-classes", type=int, default=2)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_dataset_gen)

    tr = sub.add_parser("train", help="run a training experiment from a config")
    tr.add_argument("--config", required=True)
    tr.add_argument("--metrics")
    tr.set_defaults(func=_run_config)

    fed = sub.add_parser("fed", help="federated learning")
    fsub = fed.add_subparsers(dest="subcommand", required=True)
    frun = fsub.add_parser("run", help="run a federation")
    frun.add_argument("--role", choices=["local", "server", "client"],
                      default="local")
    frun.add_argument("--rank", type=int, default=0)
    frun.add_argument("--addr", default="127.0.0.1:7070")
    frun.add_argument("--config", required=True)
    frun.add_argument("--metrics")
    frun.set_defaults(func=_cmd_fed_run)

    at = sub.add_parser("attack", help="run an attack experiment")
    at.add_argument("name", choices=sorted(xp._ATTACKS))
    at.add_argument("--config", required=True)
    at.add_argument("--metrics")
    at.add_argument("--recon-dir", help="where to write inversion outputs")
    at.set_defaults(func=_cmd_attack)

    an = sub.add_parser("anonymize", help="Mondrian k-anonymity over a CSV")
    an.add_argument("--k", type=int, required=True)
    an.add_argument("--qi", required=True, help="comma-separated QI columns")
    an.add_argument("--sensitive", default="")
    an.add_argument("input")
    an.add_argument("output")
    an.set_defaults(func=_cmd_anonymize)

    ad = sub.add_parser("audit", help="privacy audits")
    asub = ad.add_subparsers(dest="subcommand", required=True)
    adp = asub.add_parser("dp", help="moments-accountant epsilon for (q, sigma, T)")
    adp.add_argument("--q", type=float, required=True)
    adp.add_argument("--sigma", type=float, required=True)
    adp.add_argument("--steps", type=int, required=True)
    adp.add_argument("--delta", type=float, default=1e-5)
    adp.set_defaults(func=_cmd_audit_dp)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # single-line machine-parsable failure
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
