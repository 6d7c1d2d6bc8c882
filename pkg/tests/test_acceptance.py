"""Acceptance criteria. Each test records one PASS/FAIL line via helpers.record.

The reproduction criteria (6-8) train real policies and take tens of minutes;
they are marked ``slow`` and can be skipped with ``-m "not slow"``.
"""
import math

import numpy as np
import pytest

from d2dbnb.accel import build_mixed_training_set, evaluate_policy, solve_with_policy
from d2dbnb.bnb import det_key, search, solve_exact
from d2dbnb.classifiers import (FnnPolicy, OraclePolicy, fnn_forward, fnn_init, fnn_loss_and_grads,
                                fnn_train, policy_decide)
from d2dbnb.cli import run
from d2dbnb.imitate import (DaggerConfig, LabeledProblem, WeightParams, collect_data, dagger_train,
                            to_arrays)
from d2dbnb.relax import DeterminedSet, solve_node_relaxation
from d2dbnb.scenario import ScenarioConfig, generate_many, generate_scenario
from d2dbnb.transform import compute_coefficients, direct_pair_rate, pair_rate
from helpers import random_leaf, record
from oracles import enumerate_optimum, leaf_value

MASTER_SEEDS = (1, 2, 3)


def _solved(K, L, n, seed, tag):
    out = []
    for i, sc in enumerate(generate_many(ScenarioConfig(K=K, L=L, rng_seed=seed), n)):
        inst = compute_coefficients(sc, f"{tag}{i}")
        out.append(LabeledProblem(inst, solve_exact(inst)))
    return out


@pytest.fixture(scope="module")
def small_instances():
    """The 50 seeded instances shared by criteria 1, 2 and 9."""
    rng = np.random.default_rng(20240)
    out = []
    for i in range(50):
        K, L = int(rng.choice([2, 3])), int(rng.choice([1, 2]))
        sc = generate_scenario(ScenarioConfig(K=K, L=L, rng_seed=int(rng.integers(2**31))))
        inst = compute_coefficients(sc, f"small{i}")
        out.append((inst, solve_exact(inst)))
    return out


# ---------------------------------------------------------------- 1

def test_c1_exact_search_matches_enumeration(small_instances):
    worst = 0.0
    for inst, res in small_instances:
        best, _ = enumerate_optimum(inst)
        worst = max(worst, abs(res.objective - best) / abs(best))
    ok = worst <= 1e-4
    record(1, ok, f"50 instances, worst relative gap {worst:.2e} (limit 1e-4)")
    assert ok


# ---------------------------------------------------------------- 2

def test_c2_relaxation_correctness(small_instances):
    rng = np.random.default_rng(77)
    worst = worst_kkt = worst_viol = 0.0
    for j in range(20):
        K, L = int(rng.integers(2, 6)), int(rng.integers(1, 3))
        inst = compute_coefficients(generate_scenario(ScenarioConfig(K=K, L=L, rng_seed=5000 + j)))
        rho = random_leaf(rng, K, L)
        sol = solve_node_relaxation(inst, DeterminedSet.from_matrix(rho))
        ref = leaf_value(inst, rho)
        worst = max(worst, abs(sol.eta - ref) / abs(ref))
        worst_kkt = max(worst_kkt, sol.kkt_residual)
        worst_viol = max(worst_viol, sol.max_violation)
    root_ok = all(res.b_u_root >= res.objective * (1 - 1e-9) for _, res in small_instances)
    ok = worst <= 1e-4 and worst_kkt <= 1e-8 and worst_viol <= 1e-8 and root_ok
    record(2, ok, f"20 leaves: rel err {worst:.2e}, KKT {worst_kkt:.1e}, violation {worst_viol:.1e}; "
                  f"root >= optimum on all 50: {root_ok}")
    assert ok


# ---------------------------------------------------------------- 3

def test_c3_transformed_rate_identity():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        K, L = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        sc = generate_scenario(ScenarioConfig(K=K, L=L, rng_seed=int(rng.integers(2**31))))
        inst = compute_coefficients(sc)
        k, l = int(rng.integers(K)), int(rng.integers(L))
        p = float(rng.uniform(0, 1)) * inst.p_cap[k, l]
        direct = direct_pair_rate(sc, k, l, p)
        mine = pair_rate(inst, k, l, 1, p)
        if direct > 0:
            worst = max(worst, abs(mine - direct) / direct)
        else:
            worst = max(worst, abs(mine))
    ok = worst <= 1e-9
    record(3, ok, f"1000 draws, worst relative difference {worst:.2e} (limit 1e-9)")
    assert ok


# ---------------------------------------------------------------- 4

def test_c4_weights_and_filtering():
    probs = _solved(5, 2, 24, 4040, "w")
    params = WeightParams(5.0, 2.68, 8.0)
    trained = dagger_train(DaggerConfig(probs[:20], M=2, seed=1), params)
    policies = [("oracle", None), ("learned", trained.policy)]
    n_samples = bad_weight = root_bad = leaked = 0
    for lp in probs:
        D = lp.inst.K * lp.inst.L
        ex = solve_exact(lp.inst, log_nodes=True)
        fathomed = {det_key(r.det) for r in ex.node_log if r.outcome.fathomed}
        for _, pol in policies:
            pol = OraclePolicy(lp.exact.rho_star) if pol is None else pol
            samples = collect_data(lp.inst, pol, lp.exact.rho_star, params, exclude=lp.exact.fathomed)
            walk, _ = search(lp.inst, pol, rho_star=lp.exact.rho_star, want_features=True)
            dets = {r.node_id: r for r in walk.node_log}
            for s in samples:
                rec = dets[s.node_id]
                w2 = 8.0 if s.label == 1 else 1.0
                n_samples += 1
                bad_weight += s.weight != 5.0 * math.exp(-2.68 * rec.depth / D) * w2
                if rec.depth == 0:
                    root_bad += s.weight / w2 != 5.0
                leaked += det_key(rec.det) in fathomed
    # the dataset DAgger actually trained on obeys the same rule
    for s in trained.dataset:
        w2 = 8.0 if s.label == 1 else 1.0
        depth = round(s.features[0] * 10)
        bad_weight += s.weight != 5.0 * math.exp(-2.68 * depth / 10) * w2
    ok = bad_weight == 0 and root_bad == 0 and leaked == 0 and n_samples > 0
    record(4, ok, f"{n_samples + len(trained.dataset)} samples: {bad_weight} bad weights, {root_bad} bad root "
                  f"weights, {leaked} originally-fathomed nodes")
    assert ok


# ---------------------------------------------------------------- 5

def test_c5_fnn_numerics():
    # relative error per parameter tensor; the elementwise worst is reported too,
    # it bottoms out at the finite-difference rounding floor on near-zero entries
    h = 1e-5
    worst = worst_elem = 0.0
    sum_err = 0.0
    for b in range(3):
        rng = np.random.default_rng(500 + b)
        m = fnn_init(10 + b)
        Z = rng.normal(size=(32, 8))
        y = rng.integers(0, 2, 32)
        w = rng.uniform(0.3, 40.0, 32)
        _, gW, gb = fnn_loss_and_grads(m.weights, m.biases, Z, y, w)
        for params, grads in ((m.weights, gW), (m.biases, gb)):
            for P, G in zip(params, grads):
                fd = np.zeros_like(P)
                for idx in np.ndindex(P.shape):
                    old = P[idx]
                    P[idx] = old + h
                    lp = fnn_loss_and_grads(m.weights, m.biases, Z, y, w)[0]
                    P[idx] = old - h
                    lm = fnn_loss_and_grads(m.weights, m.biases, Z, y, w)[0]
                    P[idx] = old
                    fd[idx] = (lp - lm) / (2 * h)
                worst = max(worst, float(np.linalg.norm(fd - G) / np.linalg.norm(G)))
                den = np.maximum(np.maximum(np.abs(fd), np.abs(G)), 1e-300)
                worst_elem = max(worst_elem, float((np.abs(fd - G) / den).max()))
        X = rng.normal(size=(1000, 8)) * 10.0 ** rng.uniform(-3, 3, size=(1000, 1))
        sum_err = max(sum_err, float(np.abs(fnn_forward(m, X).sum(axis=1) - 1.0).max()))
    ok = worst <= 1e-5 and sum_err <= 1e-12
    record(5, ok, f"gradient rel err per tensor {worst:.2e} (limit 1e-5; elementwise worst {worst_elem:.1e}), "
                  f"softmax sum err {sum_err:.1e} (limit 1e-12)")
    assert ok


# ---------------------------------------------------------------- 9

def test_c9_soft_decision_control(small_instances):
    # a trained network, so tau=0 is not trivially "always branch" by construction
    probs = [LabeledProblem(inst, res) for inst, res in small_instances[:30]]
    samples = []
    for lp in probs:
        samples += collect_data(lp.inst, OraclePolicy(lp.exact.rho_star), lp.exact.rho_star)
    X, y, w = to_arrays(samples)
    model = fnn_train(X, y, w, seed=9)
    pol = FnnPolicy(model, 0.5)
    exact_all = True
    for inst, res in small_instances:
        got, _, _ = solve_with_policy(inst, pol, 0.0)
        exact_all &= got is not None and got.objective == res.objective
    rng = np.random.default_rng(99)
    F = rng.normal(size=(10_000, 8)) * 10.0 ** rng.uniform(-1, 1, size=(10_000, 1))
    p = fnn_forward(model, F)[:, 0]
    taus = np.linspace(0.0, 1.0, 101)
    D = np.array([[policy_decide(_Const(pi), None, t) for t in taus] for pi in p[:200]])
    # vectorised check over all vectors: decision(tau) = p >= tau
    V = p[:, None] >= taus[None, :]
    monotone = bool(np.all(np.diff(D.astype(int), axis=1) <= 0) and np.all(np.diff(V.astype(int), axis=1) <= 0)
                    and np.array_equal(D, V[:200]))
    ok = exact_all and monotone
    record(9, ok, f"tau=0 exact on all 50: {exact_all}; monotone in tau on 1e4 vectors: {monotone}")
    assert ok


class _Const(FnnPolicy):
    def __init__(self, p):
        self.p = p
        self.tau = 0.5

    def probability(self, features):
        return np.array([self.p, 1.0 - self.p])


# ---------------------------------------------------------------- 10

def _pipeline(root):
    steps = [
        ["gen", "--k", "3", "--l", "2", "--n", "16", "--set", "train", "--out", f"{root}/train", "--seed", "7"],
        ["gen", "--k", "3", "--l", "2", "--n", "5", "--set", "test", "--out", f"{root}/test", "--seed", "7"],
        ["solve", "--in", f"{root}/train", "--out", f"{root}/train_solved"],
        ["solve", "--in", f"{root}/test", "--out", f"{root}/test_solved"],
        ["train", "--in", f"{root}/train_solved", "--out", f"{root}/svm.model", "--M", "2", "--seed", "7"],
        ["train", "--in", f"{root}/train_solved", "--out", f"{root}/fnn.model", "--classifier", "fnn",
         "--M", "2", "--epochs", "5", "--seed", "7"],
        ["eval", "--in", f"{root}/test_solved", "--model", f"{root}/svm.model", "--out", f"{root}/svm.csv"],
        ["eval", "--in", f"{root}/test_solved", "--model", f"{root}/fnn.model", "--tau", "0.3",
         "--out", f"{root}/fnn.csv"],
    ]
    for argv in steps:
        assert run(argv) == 0, argv
    return [(root / n).read_bytes() for n in ("svm.csv", "fnn.csv", "svm.model", "fnn.model")]


def test_c10_pipeline_is_deterministic(tmp_path):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    ok = a == b
    record(10, ok, f"two runs, reports and models byte-identical: {ok}")
    assert ok


# ---------------------------------------------------------------- 6, 7, 8

@pytest.fixture(scope="module")
def reproduction():
    """Per master seed: pure (5,2) policy, its (5,2)/(7,2)/(10,2) scores and the mixed (10,2) score."""
    hyper = {"C": 1.0, "kernel": "rbf"}
    weights = WeightParams(omega2_optimal=8.0)
    out = {}
    for s in MASTER_SEEDS:
        probs = _solved(5, 2, 220, s, f"s{s}_")
        train, test = probs[:200], probs[200:]
        pure = dagger_train(DaggerConfig(train, M=4, svm_hyper=hyper), weights).policy

        def score(policy, lps):
            return evaluate_policy(policy, [p.inst for p in lps], [p.exact for p in lps])

        t7 = _solved(7, 2, 20, 1000 + s, "t7_")
        t10 = _solved(10, 2, 20, 2000 + s, "t10_")
        tr10 = _solved(10, 2, 10, 3000 + s, "tr10_")
        mixed_set = build_mixed_training_set(train, tr10, 190, 10, s)
        mixed = dagger_train(DaggerConfig(mixed_set, M=4, svm_hyper=hyper), weights).policy
        out[s] = {
            "c6": score(pure, test),
            "c7": score(pure, t7),
            "c8_pure": score(pure, t10),
            "c8_mixed": score(mixed, t10),
        }
    return out


def _mean(vals):
    return sum(vals) / len(vals)


@pytest.mark.slow
def test_c6_desk_scale_reproduction(reproduction):
    ogap = _mean([r["c6"].ogap for r in reproduction.values()])
    speed = _mean([r["c6"].speed for r in reproduction.values()])
    per = ", ".join(f"seed {s}: {r['c6'].ogap:.2%}/{r['c6'].speed:.2f}x" for s, r in reproduction.items())
    ok = ogap <= 0.06 and speed >= 1.5
    record(6, ok, f"(5,2) mean ogap {ogap:.2%} (<= 6%), speed {speed:.2f}x (>= 1.5) [{per}]")
    assert ok


@pytest.mark.slow
def test_c7_generalization_to_larger_problem(reproduction):
    ogap = _mean([r["c7"].ogap for r in reproduction.values()])
    speed = _mean([r["c7"].speed for r in reproduction.values()])
    per = ", ".join(f"seed {s}: {r['c7'].ogap:.2%}/{r['c7'].speed:.2f}x" for s, r in reproduction.items())
    ok = ogap <= 0.10 and speed > 1.0
    record(7, ok, f"(5,2) policy on (7,2): mean ogap {ogap:.2%} (<= 10%), speed {speed:.2f}x (> 1) [{per}]")
    assert ok


@pytest.mark.slow
def test_c8_mixed_training_improves_optimality(reproduction):
    pure = _mean([r["c8_pure"].ogap for r in reproduction.values()])
    mixed = _mean([r["c8_mixed"].ogap for r in reproduction.values()])
    per = ", ".join(f"seed {s}: {r['c8_mixed'].ogap:.2%} vs {r['c8_pure'].ogap:.2%}"
                    for s, r in reproduction.items())
    ok = mixed <= pure
    record(8, ok, f"(10,2) mean ogap mixed {mixed:.2%} vs pure {pure:.2%} [{per}]")
    assert ok
