"""End-to-end acceptance gate: one test per criterion, one PASS line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines inline;
without -s they appear for failing tests only.
"""

import inspect
import random
import threading
import time

import numpy as np
import pytest

from privsec import (attacks as atk, dp as dpmod, fed, inversion as inv,
                     model_core as mc, paillier as pl, svm as sv,
                     transport as tp)
from privsec import experiment as xp
from privsec.datasets import synthesize_dataset, to_pm1
from privsec.mondrian import QiTable, anonymize, mondrian_partition, verify_k_anonymity
from privsec.wire import FedMessage, WireError, wire_decode, wire_encode

HERE = __file__.rsplit("/", 1)[0]


def report(n, msg):
    print(f"\ncriterion {n:02d} PASS: {msg}")


def fd_param_grad(model, X, y, h=1e-6):
    params = mc.model_to_vector(model)
    grad = np.zeros_like(params.values)
    for i in range(params.values.size):
        for sgn in (1.0, -1.0):
            p = params.copy()
            p.values[i] += sgn * h
            loss, _ = mc.loss_and_grad(mc.vector_to_model(p, model), X, y)
            grad[i] += sgn * loss
    return grad / (2.0 * h)


def test_criterion_01_gradient_correctness():
    start = time.time()
    rng = np.random.default_rng(123)
    worst_model = 0.0
    for trial in range(50):
        depth = int(rng.integers(1, 3))
        dims = [int(rng.integers(2, 5)) for _ in range(depth + 1)]
        loss_kind = ["cross_entropy", "mse", "hinge"][trial % 3]
        if loss_kind == "hinge":
            dims[-1] = 1
        act = ["relu", "sigmoid", "tanh"][trial % 3]
        model = mc.build_mlp(dims, act, loss_kind, np.random.default_rng(trial))
        m = int(rng.integers(1, 6))
        X = rng.normal(size=(m, dims[0]))
        if loss_kind == "hinge":
            y = rng.choice([-1.0, 1.0], size=m)
        elif loss_kind == "mse":
            y = rng.normal(size=(m, dims[-1]))
        else:
            y = rng.integers(0, dims[-1], size=m)
        _, g = mc.loss_and_grad(model, X, y)
        ref = fd_param_grad(model, X, y)
        rel = np.linalg.norm(g.values - ref) / max(np.linalg.norm(ref), 1e-12)
        worst_model = max(worst_model, rel)
    assert worst_model < 1e-6

    # SVM input gradients against central differences
    worst_svm = 0.0
    for seed in range(10):
        data = to_pm1(synthesize_dataset("gaussians", 30, 0.5,
                                         np.random.default_rng(seed)))
        for kernel in ("linear", "rbf"):
            model = sv.train_svm(data, kernel=kernel, C=1.0, gamma=0.7,
                                 rng=np.random.default_rng(0))
            x = np.random.default_rng(seed + 50).normal(size=2)
            g = sv.svm_input_grad(model, x)
            ref = np.zeros(2)
            h = 1e-6
            for i in range(2):
                e = np.zeros(2)
                e[i] = h
                ref[i] = (sv.svm_decision(model, x + e)
                          - sv.svm_decision(model, x - e)) / (2 * h)
            rel = np.linalg.norm(g - ref) / max(np.linalg.norm(ref), 1e-12)
            worst_svm = max(worst_svm, rel)
    elapsed = time.time() - start
    assert worst_svm < 1e-5
    assert elapsed < 10.0
    report(1, f"50 model FD checks rel<{worst_model:.1e}, "
              f"SVM input rel<{worst_svm:.1e}, {elapsed:.1f}s")


def test_criterion_02_paillier_homomorphism_fuzz():
    start = time.time()
    pk, sk = pl.keygen(512, random.Random(20240601))
    rng = random.Random(7)
    for _ in range(10_000):
        a = rng.randrange(pk.n)
        b = rng.randrange(pk.n)
        ca = pl.encrypt(pk, a, rng)
        cb = pl.encrypt(pk, b, rng)
        assert pl.decrypt(sk, pk, pl.add_cipher(pk, ca, cb)) == (a + b) % pk.n
        m = rng.randrange(1, 1000)
        assert pl.decrypt(sk, pk, pl.mul_plain(pk, ca, m)) == (a * m) % pk.n
    elapsed = time.time() - start
    assert elapsed < 60.0
    report(2, f"10^4 add/scalar fuzz pairs at 512-bit, 0 failures, {elapsed:.1f}s")


def test_criterion_03_fedavg_centralized_equivalence():
    rng = np.random.default_rng(0)
    data = synthesize_dataset("gaussians", 40, 0.5, rng)
    model = mc.build_mlp([2, 4, 2], loss="cross_entropy",
                         rng=np.random.default_rng(1))
    shards = [mc.Dataset(data.X[:20], data.y[:20]),
              mc.Dataset(data.X[20:], data.y[20:])]
    cfg = fed.FedConfig(rounds=20, local_epochs=1, local_batch=0, lr=0.2)

    params = mc.model_to_vector(model)
    worst = 0.0
    fed_params = mc.model_to_vector(model)
    for rnd in range(20):
        updates = []
        for r, shard in enumerate(shards, start=1):
            u, n = fed.client_local_update(fed_params, model, shard, cfg,
                                           np.random.default_rng(0))
            updates.append(fed.ClientUpdate(u, n, r))
        agg = fed.server_aggregate(updates, fed.HookSet())
        fed_params = fed.apply_aggregate(fed_params, agg, cfg)
        _, g = mc.loss_and_grad(mc.vector_to_model(params, model), data.X, data.y)
        params = mc.sgd_step(params, g, 0.2)
        worst = max(worst, float(np.max(np.abs(fed_params.values - params.values))))
    assert worst < 1e-12
    report(3, f"20 rounds, per-round max param diff {worst:.2e} < 1e-12")


def test_criterion_04_encrypted_federation_equivalence():
    pk, sk = pl.keygen(512, random.Random(99))
    codec = pl.FixedPointCodec(pk.n, 32)
    rng = np.random.default_rng(2)
    data = synthesize_dataset("gaussians", 40, 0.5, rng)
    model = mc.build_mlp([2, 2], loss="cross_entropy",
                         rng=np.random.default_rng(3))
    shards = [mc.Dataset(data.X[0::2], data.y[0::2]),
              mc.Dataset(data.X[1::2], data.y[1::2])]
    K = len(shards)
    rounds = 5
    cfg = fed.FedConfig(rounds=rounds, lr=0.2)
    plain, _ = fed.run_federation(model, shards, cfg, master_seed=31)
    enc, _ = fed.run_federation_paillier(model, shards, cfg, pk, sk, codec,
                                         master_seed=31)
    diff = float(np.max(np.abs(mc.model_to_vector(enc).values
                               - mc.model_to_vector(plain).values)))
    bound = rounds * K * 2.0**-32
    assert diff <= bound
    src = inspect.getsource(fed.paillier_server_aggregate)
    assert "decrypt(" not in src
    assert "sk" not in inspect.signature(fed.paillier_server_aggregate).parameters
    report(4, f"encrypted vs plaintext diff {diff:.2e} <= {bound:.2e}; "
              "server aggregate has no decryption path")


def test_criterion_05_idlg_label_recovery():
    rng = np.random.default_rng(4)
    hits = 0
    for i in range(100):
        dims = [8, int(rng.integers(3, 9)), 4]
        model = mc.build_mlp(dims, "tanh", "cross_entropy",
                             np.random.default_rng(1000 + i))
        x = rng.normal(size=8)
        y = int(rng.integers(0, 4))
        _, g = mc.loss_and_grad(model, x[None, :], [y])
        hits += inv.infer_label_idlg(g, model) == y
    assert hits == 100
    model = mc.build_mlp([8, 4], loss="cross_entropy",
                         rng=np.random.default_rng(0))
    X = rng.normal(size=(2, 8))
    _, g2 = mc.loss_and_grad(model, X, [0, 2])
    with pytest.raises(ValueError):
        inv.infer_label_idlg(g2, model)
    report(5, "100/100 single-example labels recovered; "
              "2-example gradient raises ValueError")


def test_criterion_06_gradient_inversion_8x8():
    start = time.time()
    model = mc.build_mlp([64, 16, 4], "tanh", "cross_entropy",
                         np.random.default_rng(7))
    rng = np.random.default_rng(8)
    x = rng.uniform(-0.5, 0.5, size=64)
    y = 2
    shard = mc.Dataset(x[None, :], [y])
    cfg = fed.FedConfig(rounds=1, local_epochs=1, local_batch=0, lr=0.1)
    icfg = inv.InversionConfig(variant="idlg", max_iters=2000,
                               seeds=tuple(range(10)), stop_loss=1e-16,
                               input_shape=(8, 8))
    hook, log = inv.inversion_server_hook(icfg, model)
    fed.run_federation(model, [shard], cfg,
                       fed.HookSet(pre_aggregate=[hook]), master_seed=12)
    assert log and "result" in log[0]
    grad_vec = None  # reuse the hook's single best; rerun per seed for the count
    grad = mc.loss_and_grad(model, x[None, :], [y])[1]
    good = 0
    for seed in range(10):
        one = inv.InversionConfig(variant="idlg", max_iters=2000, seeds=(seed,),
                                  stop_loss=1e-16)
        res = inv.gradient_inversion(grad, model, one)
        mse = float(np.mean((res.x_hat - x) ** 2))
        good += mse < 1e-3
    elapsed = time.time() - start
    assert good >= 8
    assert elapsed < 120.0
    report(6, f"8x8 reconstruction MSE<1e-3 on {good}/10 seeds in {elapsed:.1f}s")


def test_criterion_07_moments_accountant():
    # closed form at q=1
    ledger = dpmod.accountant_step(dpmod.PrivacyLedger(), q=1.0, sigma=1.0)
    eps, lam = dpmod.get_epsilon_with_lambda(ledger, 1e-5)
    closed = min((l * (l + 1) / 2.0 + np.log(1e5)) / l for l in range(1, 65))
    assert eps == pytest.approx(closed, abs=1e-12)
    assert eps == pytest.approx(5.303, abs=1e-3)
    assert lam == 5

    # sampled case against a 10x-refined quadrature oracle
    worst = 0.0
    for q, sigma in ((0.01, 1.0), (0.02, 2.0), (0.05, 4.0)):
        for lam_i in (1, 8, 32, 64):
            a = dpmod.log_moment_increment(q, sigma, lam_i)
            ref = dpmod.log_moment_increment(q, sigma, lam_i, step_scale=0.1)
            worst = max(worst, abs(a - ref) / max(abs(ref), 1e-300))
    assert worst < 1e-4

    # monotonicity across the 3x3x3 grid
    def eps_of(q, sigma, T):
        led = dpmod.PrivacyLedger()
        for _ in range(T):
            led = dpmod.accountant_step(led, q, sigma)
        return dpmod.get_epsilon(led, 1e-5)

    qs, sigmas, Ts = (0.01, 0.02, 0.05), (4.0, 2.0, 1.0), (10, 50, 100)
    grid = {(q, s, T): eps_of(q, s, T) for q in qs for s in sigmas for T in Ts}
    for q in qs:
        for s in sigmas:
            vals = [grid[(q, s, T)] for T in Ts]
            assert vals == sorted(vals)
    for q in qs:
        for T in Ts:
            vals = [grid[(q, s, T)] for s in sigmas]  # sigma decreasing
            assert vals == sorted(vals)
    for s in sigmas:
        for T in Ts:
            vals = [grid[(q, s, T)] for q in qs]
            assert vals == sorted(vals)
    report(7, f"eps(1,1,1,1e-5)={eps:.4f}~5.303 at lambda=5; quadrature rel "
              f"err {worst:.1e} < 1e-4; eps monotone in T, q, 1/sigma")


def test_criterion_08_dpsgd_degeneracy_and_clipping():
    rng = np.random.default_rng(5)
    data = synthesize_dataset("gaussians", 32, 0.5, rng)
    model = mc.build_mlp([2, 4, 2], loss="cross_entropy",
                         rng=np.random.default_rng(6))
    cfg = dpmod.DpConfig(clip_norm=1e9, noise_multiplier=0.0, lot_size=32,
                         batch_size=32)
    trained, ledger = dpmod.dpsgd_train(model, data, cfg, epochs=5, lr=0.2,
                                        rng=np.random.default_rng(7))
    params = mc.model_to_vector(model)
    for _ in range(5):
        _, g = mc.loss_and_grad(mc.vector_to_model(params, model), data.X, data.y)
        params = mc.sgd_step(params, g, 0.2)
    diff = float(np.max(np.abs(mc.model_to_vector(trained).values - params.values)))
    assert diff < 1e-12
    assert dpmod.get_epsilon(ledger, 1e-5) == float("inf")

    grads = mc.per_example_grads(model, data.X, data.y)
    for C in (0.01, 0.5, 2.0):
        for g in dpmod.clip_grads(grads, C):
            assert g.norm() <= C
    report(8, f"sigma=0 trajectory matches plain SGD within {diff:.1e}; "
              "all post-clip norms <= C")


def test_criterion_09_evasion_and_fgsm():
    flips = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        data = to_pm1(synthesize_dataset("gaussians", 80, 0.6, rng, mu=1.5))
        model = sv.train_svm(data, kernel="rbf", C=1.0, gamma=0.5,
                             rng=np.random.default_rng(1))
        y = np.asarray(data.y)
        benign = data.X[y == -1]
        bounds = np.tile([[-6.0, 6.0]], (2, 1))
        x0 = next(x for x in data.X[y == 1] if sv.svm_decision(model, x) > 0)
        cfg = atk.EvasionConfig(lambda_mimicry=0.5, d_max=5.0, step=0.1,
                                max_iter=300, bounds=bounds)
        x_adv, _ = atk.biggio_evasion(model, x0, benign, cfg)
        assert np.linalg.norm(x_adv - x0) <= 5.0 + 1e-9
        assert np.all(x_adv >= -6.0) and np.all(x_adv <= 6.0)
        flips += sv.svm_decision(model, x_adv) <= 0
    assert flips >= 7

    # FGSM linear identity on a hinge model in its active region
    w = np.array([0.8, -1.2, 0.4])
    model = mc.build_mlp([3, 1], loss="hinge", rng=np.random.default_rng(0))
    model.layers[0].W[:, 0] = w
    model.layers[0].b[:] = 0.0
    x = np.array([0.05, 0.02, -0.03])
    eps = 0.01
    x_adv = atk.fgsm(model, x, 1, eps)
    l0, _ = mc.loss_and_grad(model, x[None, :], [1])
    l1, _ = mc.loss_and_grad(model, x_adv[None, :], [1])
    assert l1 - l0 == pytest.approx(eps * np.abs(w).sum(), abs=1e-12)
    report(9, f"evasion flips {flips}/10 seeds, all iterates feasible; "
              "FGSM linear identity exact")


def test_criterion_10_svm_poisoning():
    def err01(model, ds):
        preds = np.array([1 if sv.svm_decision(model, xi) > 0 else -1
                          for xi in ds.X])
        return float((preds != np.asarray(ds.y)).mean())

    params = dict(kernel="linear", C=10.0)
    cfg = atk.PoisonConfig(step=1.0, max_iter=25)
    rises = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        data = to_pm1(synthesize_dataset("gaussians", 60, 0.7, rng, mu=1.0))
        order = rng.permutation(60)
        y = np.asarray(data.y)
        train = mc.Dataset(data.X[order[:20]], y[order[:20]])
        valid = mc.Dataset(data.X[order[20:]], y[order[20:]])
        clean = sv.train_svm(train, rng=np.random.default_rng(0), **params)
        base = err01(clean, valid)
        best = None
        for x0 in train.X[np.asarray(train.y) == 1][:3]:
            res = atk.svm_poison_point(train, valid, params, x0, -1, cfg)
            assert all(b > a for a, b in zip(res.trace, res.trace[1:]))
            if best is None or res.trace[-1] > best.trace[-1]:
                best = res
        Xp = np.vstack([train.X, best.x_poison[None, :]])
        yp = np.concatenate([train.y, [-1.0]])
        poisoned = sv.train_svm(mc.Dataset(Xp, yp),
                                rng=np.random.default_rng(0), **params)
        rises.append((err01(poisoned, valid) - base) * 100)
    median = float(np.median(rises))
    assert median >= 5.0
    report(10, f"accepted-loss traces strictly increasing; median validation "
               f"0-1 error rise {median:.1f} points >= 5 over 10 seeds")


def test_criterion_11_mpaf_identity():
    rng = np.random.default_rng(11)
    data = synthesize_dataset("gaussians", 40, 0.5, rng)
    model = mc.build_mlp([2, 2], loss="cross_entropy",
                         rng=np.random.default_rng(1))
    shards = [mc.Dataset(data.X[0::2], data.y[0::2]),
              mc.Dataset(data.X[1::2], data.y[1::2])]
    base = mc.model_to_vector(model)
    target = mc.ParamVector(base.values + np.pi, base.layout)
    hook = atk.mpaf_client_hook(target, scale=1.0)
    final, _ = fed.run_federation(model, shards, fed.FedConfig(rounds=1, lr=0.1),
                                  fed.HookSet(client_transform=[hook]),
                                  master_seed=13)
    diff = float(np.max(np.abs(mc.model_to_vector(final).values - target.values)))
    assert diff < 1e-12
    report(11, f"all-malicious unit-scale round lands on w_target, diff {diff:.1e}")


def test_criterion_12_membership_inference():
    from test_attacks import membership_splits

    member, nonmember, rest = membership_splits()
    victim = atk._train_mlp((2, 32, 2), member.X, member.y, 8000, 0.5,
                            np.random.default_rng(15))
    acc = lambda ds: float(
        (mc.softmax(mc.forward(victim, ds.X)).argmax(1) == ds.y).mean())
    assert acc(member) >= 0.99 and acc(nonmember) <= 0.8
    cfg = atk.MembershipConfig(n_shadows=6, shadow_dims=(32,),
                               shadow_epochs=8000, in_size=30)
    _, auc = atk.membership_attack(victim, rest, member, nonmember, cfg,
                                   np.random.default_rng(14))
    assert auc >= 0.65

    uniform = mc.build_mlp([2, 2], loss="cross_entropy",
                           rng=np.random.default_rng(17))
    uniform.layers[0].W[:] = 0.0
    uniform.layers[0].b[:] = 0.0
    ucfg = atk.MembershipConfig(n_shadows=4, shadow_epochs=300, in_size=30)
    aucs = [atk.membership_attack(uniform, rest, member, nonmember, ucfg,
                                  np.random.default_rng(s))[1]
            for s in range(20)]
    mean_auc = float(np.mean(aucs))
    assert 0.45 <= mean_auc <= 0.55
    report(12, f"overfit victim AUC {auc:.3f} >= 0.65; uniform victim mean "
               f"AUC {mean_auc:.3f} in [0.45, 0.55] over 20 seeds")


def test_criterion_13_mondrian():
    rng = np.random.default_rng(0)
    n = 1000
    table = QiTable(
        columns={
            "age": rng.integers(18, 90, size=n).tolist(),
            "zip": rng.choice(["11111", "22222", "33333", "44444"],
                              size=n).tolist(),
            "income": np.round(rng.lognormal(10, 0.5, size=n), 2).tolist(),
            "diagnosis": rng.choice(["flu", "cold", "ok"], size=n).tolist(),
        },
        qi=[("age", "numeric"), ("zip", "categorical"), ("income", "numeric")],
        sensitive=["diagnosis"],
    )
    sizes = {}
    for k in (2, 5, 10):
        anon = anonymize(table, k)
        groups = {}
        for i in range(n):
            key = tuple(anon.columns[name][i] for name in anon.qi_names)
            groups[key] = groups.get(key, 0) + 1
        assert min(groups.values()) >= k
        assert verify_k_anonymity(anon, k)
        sizes[k] = len(groups)

    ages = QiTable(columns={"age": [21, 22, 35, 36]}, qi=[("age", "numeric")])
    parts = mondrian_partition(ages, 2)
    assert sorted(map(sorted, parts)) == [[0, 1], [2, 3]]
    report(13, f"k in (2,5,10) on 1000 rows hold (group counts {sizes}); "
               "ages example partitions to {21,22} | {35,36}")


def test_criterion_14_wire_fuzz_and_transport():
    rng = np.random.default_rng(14)
    pyrng = random.Random(14)
    crashes = 0
    for i in range(10_000):
        if i % 2 == 0:
            data = bytes(pyrng.randrange(256)
                         for _ in range(pyrng.randrange(0, 60)))
        else:
            body = bytes(pyrng.randrange(256)
                         for _ in range(pyrng.randrange(0, 40)))
            frame = bytearray(wire_encode(FedMessage(
                "local_update", pyrng.randrange(2**32),
                pyrng.randrange(2**32), pyrng.randrange(2**16), body)))
            frame[pyrng.randrange(len(frame))] ^= 1 << pyrng.randrange(8)
            data = bytes(frame)
        try:
            msg = wire_decode(data)
            assert wire_encode(msg) == data  # encode-decode identity
        except WireError:
            pass
        except Exception:
            crashes += 1
    assert crashes == 0

    for kind in ("hello", "global_model", "local_update", "enc_update", "bye"):
        msg = FedMessage(kind, 3, 1, 5, b"\x00\x01\x02")
        assert wire_decode(wire_encode(msg)) == msg

    # TCP run must be bit-identical to the in-process run
    data = synthesize_dataset("gaussians", 40, 0.5, np.random.default_rng(3))
    model = mc.build_mlp([2, 2], loss="cross_entropy",
                         rng=np.random.default_rng(4))
    shards = [mc.Dataset(data.X[0::2], data.y[0::2]),
              mc.Dataset(data.X[1::2], data.y[1::2])]
    cfg = fed.FedConfig(rounds=5, local_epochs=2, local_batch=4, lr=0.15)
    local, _ = fed.run_federation(model, shards, cfg, master_seed=21)

    out = {}
    box = {}
    ready = threading.Event()

    def server():
        m, _ = tp.serve_federation(
            model, cfg, 2, port=0,
            ready_callback=lambda a: (box.update(addr=a), ready.set()))
        out["v"] = mc.model_to_vector(m).values

    ts = threading.Thread(target=server)
    ts.start()
    assert ready.wait(10)
    cs = [threading.Thread(target=tp.run_client,
                           args=(model, lambda r: shards[r - 1], cfg,
                                 box["addr"]), kwargs={"master_seed": 21})
          for _ in range(2)]
    for t in cs:
        t.start()
    for t in cs:
        t.join(30)
    ts.join(30)
    assert np.array_equal(out["v"], mc.model_to_vector(local).values)
    report(14, "10^4 frame fuzz with no crashes, encode-decode identity holds, "
               "TCP federation bit-identical to in-process")


def test_criterion_15_harness_determinism(tmp_path):
    cfg_path = f"{HERE}/../demos/configs/fed_baseline.ini"
    out1 = str(tmp_path / "a.jsonl")
    out2 = str(tmp_path / "b.jsonl")
    xp.write_metrics(xp.run_experiment(xp.parse_config(cfg_path)), out1)
    xp.write_metrics(xp.run_experiment(xp.parse_config(cfg_path)), out2)
    b1 = open(out1, "rb").read()
    b2 = open(out2, "rb").read()
    assert b1 == b2 and len(b1) > 0
    report(15, "shipped fed_baseline.ini run twice gives byte-identical metrics")
