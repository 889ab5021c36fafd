"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

The desk-scale learning comparison trains 20 MountainCar agents and takes
roughly ten to fifteen minutes on one core.
"""

import statistics
import time

import numpy as np
import pytest
from scipy import stats

from replay_weights.envs import ChainMdp, value_iteration_oracle
from replay_weights.harness import (
    ExperimentConfig,
    _mean_convergence,
    ablation_grid,
    format_batch_table,
    per_composition_study,
    reduction_rate,
    run_experiment,
    run_many,
    write_run_outputs,
)
from replay_weights.learner import MlpQNetwork, reference_mse_step, run_tabular_q_learning
from replay_weights.replay import PerConfig, PrioritizedBuffer, Transition
from replay_weights.sumtree import SumTree
from replay_weights.validate import main_suite

from oracles import linear_scan_sample
from test_learner import finite_difference, random_batch


def test_kernel_property_suite(acceptance):
    start = time.perf_counter()
    ok, text = main_suite(seed=0, count=1000)
    elapsed = time.perf_counter() - start
    print(text)
    assert acceptance("kernel property suite, 1000 batches, under 10 s", ok and elapsed < 10.0, f"{elapsed:.2f} s")


def _sumtree_consistency() -> float:
    rng = np.random.default_rng(11)
    cap = 512
    tree = SumTree(cap)
    brute = np.zeros(cap)
    worst = 0.0
    for _ in range(10_000):
        i = int(rng.integers(cap))
        v = float(rng.exponential()) if rng.random() < 0.85 else 0.0
        tree.update(i, v)
        brute[i] = v
    prefix = np.cumsum(brute)
    worst = max(worst, tree.max_relative_inconsistency(), abs(tree.total - prefix[-1]) / prefix[-1])
    # descent must agree with a linear scan over the brute-force prefix sums
    u = rng.random(2000) * prefix[-1]
    found = tree.find(u)
    expected = [linear_scan_sample(brute.tolist(), x) for x in u]
    if found.tolist() != expected:
        return np.inf
    return worst


def _chi_square_min_p() -> float:
    rng = np.random.default_rng(2025)
    cfg = PerConfig(alpha=0.6)
    worst = 1.0
    for _ in range(20):
        m = int(rng.integers(2, 65))
        buf = PrioritizedBuffer(m, 1, cfg)
        for i in range(m):
            buf.push(Transition(np.array([float(i)]), 0, 0.0, np.array([0.0]), False))
        td = rng.exponential(size=m) * rng.choice([0.1, 1.0, 10.0])
        buf.update_priorities(np.arange(m), td)
        p = cfg.priority(td)
        p /= p.sum()
        n = min(m, 32)
        idx = np.concatenate([buf.sample(n, rng).indices for _ in range(100_000 // n + 1)])[:100_000]
        counts = np.bincount(idx, minlength=m)
        worst = min(worst, stats.chisquare(counts, p * counts.sum()).pvalue)
    return worst


def _two_leaf_is_weights() -> bool:
    buf = PrioritizedBuffer(2, 1, PerConfig(alpha=1.0))
    for i in range(2):
        buf.push(Transition(np.array([float(i)]), 0, 0.0, np.array([0.0]), False))
    buf.tree.update(0, 1.0)
    buf.tree.update(1, 3.0)
    return buf.is_weights([0, 1], beta=1.0).tolist() == [1.0, 1.0 / 3.0]


def test_replay_suite(acceptance):
    start = time.perf_counter()
    consistency = _sumtree_consistency()
    min_p = _chi_square_min_p()
    is_ok = _two_leaf_is_weights()
    elapsed = time.perf_counter() - start
    r1 = acceptance("sum-tree consistency after 1e4 mixed ops", consistency <= 1e-6, f"max rel {consistency:.2e}")
    r2 = acceptance("PER chi-square frequencies, 20 vectors x 1e5 draws", min_p > 0.001, f"min p {min_p:.4f}")
    r3 = acceptance("beta=1 two-leaf IS weights exact", is_ok)
    r4 = acceptance("replay suite under 60 s", elapsed < 60.0, f"{elapsed:.1f} s")
    assert r1 and r2 and r3 and r4


def test_learner_suite(acceptance):
    start = time.perf_counter()
    worst = 0.0
    archs = [[3, 2, 4], [2, 5, 3, 3], [2, 6, 6, 3], [4, 3, 2]]
    for i in range(100):
        sizes = archs[i % len(archs)]
        rng = np.random.default_rng(1000 + i)
        net = MlpQNetwork(sizes, gamma=0.9, rng=rng)
        net.theta_target = net.theta + rng.normal(scale=0.1, size=net.n_params)
        b = random_batch(rng, 8, sizes[0], sizes[-1])
        w = rng.uniform(0.2, 2.0, size=8)
        g, _, _ = net.gradient(b, w)
        fd = finite_difference(net, b, w)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-8))))

    rng = np.random.default_rng(8)
    b = random_batch(rng, 64, 2, 3)
    a = MlpQNetwork([2, 64, 64, 3], rng=np.random.default_rng(1), lr=0.05)
    r = MlpQNetwork([2, 64, 64, 3], rng=np.random.default_rng(1), lr=0.05)
    identical = True
    for _ in range(10):
        identical &= a.train_step(b, np.ones(64)).loss == reference_mse_step(r, b).loss
    identical &= a.theta.tobytes() == r.theta.tobytes()

    mdp = ChainMdp(10, gamma=0.95)
    q_star = value_iteration_oracle(mdp)
    table = run_tabular_q_learning(ChainMdp(10, gamma=0.95), steps=200_000, seed=0)
    err = float(np.max(np.abs(table.values - q_star)))
    elapsed = time.perf_counter() - start

    r1 = acceptance("gradient vs finite differences, 100 instances", worst < 1e-4, f"max rel {worst:.2e}")
    r2 = acceptance("unit-weight step bit-identical to reference", bool(identical))
    r3 = acceptance("tabular chain n=10 within 2e5 steps", err < 1e-3, f"sup error {err:.2e}")
    r4 = acceptance("learner suite under 60 s", elapsed < 60.0, f"{elapsed:.1f} s")
    assert r1 and r2 and r3 and r4


def _bootstrap_diff_ci(on, off, seed=0, reps=10_000):
    rng = np.random.default_rng(seed)
    on, off = np.asarray(on, float), np.asarray(off, float)
    diffs = rng.choice(on, (reps, on.size)).mean(axis=1) - rng.choice(off, (reps, off.size)).mean(axis=1)
    return np.percentile(diffs, [2.5, 97.5])


@pytest.mark.slow
def test_desk_scale_learning_comparison(acceptance, tmp_path):
    on_cfg = ExperimentConfig()
    off_cfg = on_cfg.with_(kernel=None)
    seeds = sorted(on_cfg.seeds)
    records = run_many([(c, s) for c in (on_cfg, off_cfg) for s in seeds])
    on_recs, off_recs = records[: len(seeds)], records[len(seeds) :]
    write_run_outputs(on_cfg, on_recs, tmp_path / "pbwl")
    write_run_outputs(off_cfg, off_recs, tmp_path / "baseline")
    reached = sum(max(r.smoothed_success) >= 0.9 for r in on_recs)
    converged = [r.convergence_episode for r in on_recs]
    base_conv = [r.convergence_episode for r in off_recs]
    med = lambda xs: statistics.median([x for x in xs if x is not None]) if any(x is not None for x in xs) else None
    print(f"PBWL convergence episodes:     {converged}  median {med(converged)}")
    print(f"baseline convergence episodes: {base_conv}  median {med(base_conv)}")
    on_mean, on_missed = _mean_convergence(on_recs)
    off_mean, off_missed = _mean_convergence(off_recs)
    row = {
        "batch_size": on_cfg.batch_size,
        "off": off_mean,
        "on": on_mean,
        "off_missed": off_missed,
        "on_missed": on_missed,
        "reduction_rate": reduction_rate(off_mean, on_mean),
    }
    print(format_batch_table([row]))
    budget = on_cfg.episodes + 1
    lo, hi = _bootstrap_diff_ci([c or budget for c in converged], [c or budget for c in base_conv])
    print(f"95% bootstrap CI of mean convergence episode (PBWL - baseline): [{lo:.1f}, {hi:.1f}] (advisory)")
    assert acceptance(
        "desk-scale PBWL reaches 0.9 smoothed success on >= 8/10 seeds",
        reached >= 8,
        f"{reached}/10 reached, PBWL median {med(converged)}, baseline median {med(base_conv)}",
    )


@pytest.mark.slow
def test_ablation_grid_end_to_end(acceptance, tmp_path):
    cfg = ExperimentConfig(seeds=(0, 1), episodes=12, warmup_steps=500)
    result = ablation_grid(cfg, tmp_path)
    print(result["table"])
    fps = {r["fingerprint"] for r in result["rows"]}
    files_ok = all(
        r["fingerprint"] in (tmp_path / _cell_dir(r) / "mean.csv").read_text() for r in result["rows"]
    )
    ok = len(result["rows"]) == 12 and len(fps) == 12 and files_ok and (tmp_path / "ablation.txt").exists()
    assert acceptance("ablation grid runs all 12 cells and emits the table", ok)


def _cell_dir(row):
    soft = "softmax-on" if row["softmax"] else "softmax-off"
    return f"{row['normalization']}_{soft}_{row['norm']}"


@pytest.mark.slow
def test_per_composition_study(acceptance, tmp_path):
    cfg = ExperimentConfig(seeds=(0,), episodes=8, warmup_steps=500)
    result = per_composition_study(cfg, tmp_path)
    checks = result["checks"]
    ok = len(result["summary"]) == 4 and all(checks.values())
    assert acceptance("PER study: 4 arms, degenerate and multiplier checks exact", ok, str(checks))


@pytest.mark.slow
def test_determinism_across_jobs(acceptance, tmp_path):
    cfg = ExperimentConfig(seeds=(0, 1, 2), episodes=3, warmup_steps=200, trace_batches=2)
    run_experiment(cfg, tmp_path / "j1", jobs=1)
    run_experiment(cfg, tmp_path / "j3", jobs=3)
    run_experiment(cfg, tmp_path / "again", jobs=1)
    names = ["seed_0.csv", "seed_1.csv", "seed_2.csv", "mean.csv", "summary.json", "traces.json"]
    same = all(
        (tmp_path / "j1" / n).read_bytes() == (tmp_path / d / n).read_bytes() for n in names for d in ("j3", "again")
    )
    assert acceptance("byte-identical outputs across repeats and --jobs levels", same)
