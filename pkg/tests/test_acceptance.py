"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL line."""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from emaml import envs, harness, meta, nn, ppo
from emaml.envs import EnvState, FuelTankParams
from emaml.meta import ComplementEntry, InnerResult, MetaConfig, PolicyComplement
from emaml.store import PolicyStore
from conftest import random_memory

ROOT = Path(__file__).resolve().parents[1]
SEEDS = range(5)


def verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def close(analytic, fd):
    return bool(np.all(np.abs(analytic - fd) <= 1e-4 * np.abs(fd) + 1e-6))


# -- 1: gradient oracles ---------------------------------------------------------------

def _forward_case(rng):
    sizes = tuple(int(k) for k in rng.integers(1, 6, size=rng.integers(3, 6)))
    pv = nn.init_params(nn.NetworkSpec(sizes, str(rng.choice(["linear", "sigmoid"]))), rng)
    X = rng.normal(size=(7, sizes[0]))
    C = rng.normal(size=(7, sizes[-1]))

    def loss(tape):
        return float(np.sum(C * tape.forward(X))), [C]

    return nn.gradient(pv, loss), nn.finite_difference_gradient(pv, loss)


def _ppo_case(rng):
    n_obs, n_bits = (4, 1) if rng.random() < 0.5 else (6, 6)
    th = nn.init_params(nn.NetworkSpec((n_obs, 5, 5, n_bits), "sigmoid"), rng)
    tv = nn.init_params(nn.NetworkSpec((n_obs, 5, 5, 1)), rng)
    mem = random_memory(rng, n_obs, n_bits)
    R = ppo.memory_returns(mem, 0.99)
    adv = R - nn.forward(tv, mem.states)[:, 0]
    _, g_pi, g_v = ppo.ppo_loss_and_grad(th, tv, mem, R, 0.2)
    fd_pi = nn.finite_difference_gradient(
        th, lambda t: ppo.ppo_loss(th.replace(t.theta), tv, mem, R, 0.2, advantages=adv))
    fd_v = nn.finite_difference_gradient(
        tv, lambda t: ppo.ppo_loss(th, tv.replace(t.theta), mem, R, 0.2, advantages=adv))
    return np.concatenate([g_pi, g_v]), np.concatenate([fd_pi, fd_v])


def _score_case(rng):
    th = nn.init_params(nn.NetworkSpec((4, 5, 5, 1), "sigmoid"), rng)
    mem = random_memory(rng, 4, 1)
    returns = str(rng.choice(meta.SCORE_RETURNS))
    _, g = meta.expected_return_score_grad(th, mem, 0.99, returns)
    fd = nn.finite_difference_gradient(
        th, lambda t: meta.expected_return_score(th.replace(t.theta), mem, 0.99, returns))
    return g, fd


def _gain_case(rng):
    th = nn.init_params(nn.NetworkSpec((6, 5, 5, 6), "sigmoid"), rng)
    mem = random_memory(rng, 6, 6, theta=th)
    other = th.replace(th.values + 0.05 * rng.normal(size=th.values.shape))
    gain = meta.Gain(mem, mem.log_probs_old, meta.advantages(mem, MetaConfig()), 0.2)
    g = gain.grad(other)
    fd = nn.finite_difference_gradient(other, lambda t: gain.value_and_grad(other.replace(t.theta))[0])
    return g, fd


def test_criterion_1_gradient_oracles(capsys):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    cases = {"forward": _forward_case, "ppo_loss": _ppo_case, "score": _score_case, "gain": _gain_case}
    failures, n = [], 0
    for name, make in cases.items():
        for i in range(15):
            g, fd = make(rng)
            n += 1
            if not close(g, fd):
                failures.append(f"{name}#{i}")
    elapsed = time.perf_counter() - start
    ok = not failures and n >= 50 and elapsed < 30
    verdict(capsys, 1, ok, f"{n} instances, {len(failures)} mismatched {failures[:5]}, {elapsed:.1f}s")


# -- 2: exact examples -------------------------------------------------------------------

def test_criterion_2_worked_examples(capsys):
    start = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", "-m", "example and not slow",
         "--ignore", str(ROOT / "tests" / "test_acceptance.py"), str(ROOT / "tests")],
        cwd=ROOT, capture_output=True, text=True)
    elapsed = time.perf_counter() - start
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and elapsed < 10
    verdict(capsys, 2, ok, f"{summary!r}, {elapsed:.1f}s")


# -- 3: divergence axioms ------------------------------------------------------------------

def test_criterion_3_divergence_axioms(capsys):
    rng = np.random.default_rng(7)
    bad = []
    for i in range(1000):
        k = int(rng.integers(2, 8))
        p = rng.dirichlet(np.ones(k))
        q = p.copy() if i % 10 == 0 else rng.dirichlet(np.ones(k))
        d, d_rev = float(meta.jsd(p, q)), float(meta.jsd(q, p))
        if not (0.0 <= d <= np.log(2)) or abs(d - d_rev) > 1e-12:
            bad.append(i)
        if (d == 0.0) != np.array_equal(p, q):
            bad.append(i)
    disjoint = float(meta.jsd([0.3, 0.7, 0.0, 0.0], [0.0, 0.0, 0.5, 0.5]))
    ok = not bad and abs(disjoint - np.log(2)) <= 1e-9
    verdict(capsys, 3, ok, f"1000 pairs, {len(bad)} violations, disjoint={disjoint!r}")


# -- 4: fuel conservation -----------------------------------------------------------------

def test_criterion_4_fuel_conservation(capsys):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(10):
        p = FuelTankParams(pump_rates=tuple(rng.uniform(0, 0.5, 6)),
                           resistances=tuple(rng.uniform(20, 200, 6)),
                           engine_rates=tuple(rng.uniform(0, 0.1, 2)),
                           leak_rates=tuple(rng.uniform(0, 0.01, 6)))
        state = EnvState(tuple(rng.uniform(20, 80, 6)))
        start, drawn = sum(state.values), 0.0
        for _ in range(1000):
            res = envs.fueltank_step(p, state, rng.integers(0, 2, 6))
            drawn += res.engine_draw + res.leak_draw
            state = EnvState(res.next_state.values)
        worst = max(worst, abs(start - sum(state.values) - drawn))
    verdict(capsys, 4, worst <= 1e-9, f"10 trajectories x 1000 steps, worst imbalance {worst:.3e}")


# -- 5, 6, 7: protocol reproduction -------------------------------------------------------------

@pytest.mark.slow
def test_criterion_5_ranking(protocol, capsys):
    config, runs = protocol
    wins, rows = 0, []
    for seed in SEEDS:
        store = runs[seed]["store"]
        labels = ["j1", "j3", "j5", "j7"]
        comp = store.load_complement([harness.fault_policy_id(l, seed) for l in labels])
        theta0, _ = store.load_policy(harness.nominal_id(seed))
        mem = ppo.collect(config.make_env(config.adapt_fault), theta0, config.meta.memory_size,
                          harness.rng_for(seed, "adapt", config.adapt_fault.label, "buffer"))
        s = dict(zip(labels, meta.score_complement(comp, mem, config.ppo.gamma, config.meta.score_returns)))
        win = min(s["j5"], s["j7"]) > max(s["j1"], s["j3"])
        wins += win
        rows.append(f"s{seed}:{'ok' if win else 'no'}")
    verdict(capsys, 5, wins >= 4, f"reversed-force policies rank top in {wins}/5 seeds ({' '.join(rows)})")


@pytest.mark.slow
def test_criterion_6_divergence(protocol, capsys):
    _, runs = protocol
    wins, rows = 0, []
    for seed in SEEDS:
        totals = runs[seed]["store"].complement_info(harness.complement_name(seed))["all_total_divergence"]
        rev = np.mean([totals[harness.fault_policy_id(f"j{i}", seed)] for i in (5, 6, 7)])
        same = np.mean([totals[harness.fault_policy_id(f"j{i}", seed)] for i in (1, 2, 3, 4)])
        wins += rev > same
        rows.append(f"s{seed}:{rev:.3f}/{same:.3f}")
    verdict(capsys, 6, wins >= 4, f"reversed > same-direction mean D_T in {wins}/5 seeds ({' '.join(rows)})")


@pytest.mark.slow
def test_criterion_7_adaptation_ordering(protocol, capsys):
    _, runs = protocol
    wins, rows = 0, []
    for seed in SEEDS:
        store = runs[seed]["store"]
        t = {k: harness.total_reward(store, rec.run_id) for k, rec in runs[seed]["runs"].items()}
        win = t["emaml2"] >= t["emaml4"] and t["emaml2"] > t["ppo"]
        wins += win
        rows.append(f"s{seed}:{t['emaml2']:.0f}/{t['emaml4']:.0f}/{t['ppo']:.0f}")
    verdict(capsys, 7, wins >= 4,
            f"emaml2>=emaml4 and emaml2>ppo in {wins}/5 pairs (r2/r4/ppo {' '.join(rows)})")


# -- 8: variant equivalence ------------------------------------------------------------------

def test_criterion_8_variant_equivalence(capsys):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 40))
        theta = rng.normal(size=n)
        results = [InnerResult(rng.normal(size=n), rng.normal(size=n), np.eye(n))
                   for _ in range(int(rng.integers(1, 5)))]
        d = meta.delta_theta("maml", theta, results) - meta.delta_theta("fomaml", theta, results)
        worst = max(worst, float(np.max(np.abs(d))))
    identical = True
    for variant in meta.VARIANTS:
        th = nn.init_params(nn.NetworkSpec((4, 5, 5, 1), "sigmoid"), rng)
        comp = PolicyComplement(tuple(
            ComplementEntry(nn.init_params(th.spec, rng), f"p{i}", 0) for i in range(4)))
        cfg = MetaConfig(alpha_out=0.0, variant=variant, k_in=1, k_out=2, rank=2)
        out = meta.emaml_meta_update(th, random_memory(rng, 4, 1, theta=th, n=40), comp, cfg)
        identical &= out.values.tobytes() == th.values.tobytes()
    ok = worst <= 1e-12 and identical
    verdict(capsys, 8, ok, f"max |maml - fomaml| = {worst:.1e} over 100 inputs, alpha_out=0 identity {identical}")


# -- 9: determinism and persistence ----------------------------------------------------------------

SMALL = {
    "runs": {"nominal_steps": 2000, "complement_steps": 1000, "adapt_steps": 2000, "divergence_buffer": 100},
    "meta": {"memory_size": 500},
}


def _end_to_end(root):
    config = harness.build_config(SMALL)
    store = PolicyStore(root)
    harness.cmd_train_nominal(config, store, 4)
    harness.cmd_build_complement(config, store, 4)
    ids = [harness.cmd_adapt(config, store, 4, m, 2).run_id for m in ("emaml", "maml", "ppo")]
    texts = {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*.csv"))}
    texts["report"] = harness.cmd_report(store, ids).encode()
    return texts


def test_criterion_9_determinism_and_persistence(tmp_path, capsys):
    a, b = _end_to_end(tmp_path / "a"), _end_to_end(tmp_path / "b")
    same_csv = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    rng = np.random.default_rng(9)
    store = PolicyStore(tmp_path / "rt")
    exact = True
    for i in range(20):
        sizes = tuple(int(k) for k in rng.integers(1, 9, size=3))
        th = nn.init_params(nn.NetworkSpec(sizes, "sigmoid"), rng)
        th = th.replace(th.values * 10.0 ** rng.uniform(-8, 8, size=th.values.shape))
        store.save_policy(th, {}, f"p{i}")
        back, _ = store.load_policy(f"p{i}")
        exact &= back.values.tobytes() == th.values.tobytes() and back.spec == th.spec
    ok = same_csv and exact
    verdict(capsys, 9, ok, f"{len(a)} CSVs byte-identical {same_csv}, 20 round-trips bit-exact {exact}")
