"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear inline) or
``python tests/test_acceptance.py`` for the bare summary.
"""
import json
import math
import os
import subprocess
import sys
import textwrap
import time

import numpy as np
import pytest

import stata.solver as solver_mod
from stata.bench import mc_kl_oracle
from stata.cli import main as cli_main
from stata.embeddings import save_embeddings, save_labels
from stata.gaussian import AnchorDistribution, GaussianBank, compute_beta, kl_anchor_term, update_parameters
from stata.online import fold_batch, stream_init
from stata.scenarios import BatchScenario, _class_pools, dirichlet_slots, sample_batch_task, slot_count
from stata.solver import SolverConfig, solve
from stata.synthetic import SyntheticSpec, tune_anchor_noise
from stata.zeroshot import accuracy, zero_shot_predict

RESULTS = {}


def report(num, ok, detail, capsys):
    line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[num] = line
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def _unit(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _instance(rng, n, k, d):
    t = _unit(rng, k, d)
    lab = rng.integers(0, k, n)
    f = t[lab] + rng.uniform(0.1, 1.0) * rng.standard_normal((n, d))
    return f / np.linalg.norm(f, axis=1, keepdims=True), t


def test_c01_kl_closed_form_vs_monte_carlo(capsys):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    fails = 0
    for _ in range(20):
        d = int(rng.integers(1, 5))
        mp, mq = rng.standard_normal(d), rng.standard_normal(d)
        sp, sq = rng.uniform(0.2, 3.0, d), rng.uniform(0.2, 3.0, d)
        closed = kl_anchor_term(GaussianBank(mq[None], sq[None]), AnchorDistribution(mp[None], sp))
        est, se = mc_kl_oracle(mp, sp, mq, sq, 1_000_000, rng, return_stderr=True)
        tol = max(0.01 * abs(closed), 3 * se)
        worst = max(worst, abs(est - closed) / tol)
        fails += abs(est - closed) > tol
    elapsed = time.perf_counter() - start
    report(1, fails == 0 and elapsed < 30,
           f"20 pairs, worst |mc-closed|/tol = {worst:.2f}, {elapsed:.1f}s", capsys)


def _eq9_by_loops(f, z):
    n, d = f.shape
    k = z.shape[1]
    v = np.empty((k, d))
    T = np.empty((k, d))
    for c in range(k):
        m = math.fsum(z[:, c])
        for j in range(d):
            v[c, j] = math.fsum(z[i, c] * f[i, j] for i in range(n)) / m
        for j in range(d):
            T[c, j] = math.fsum(z[i, c] * (f[i, j] - v[c, j]) ** 2 for i in range(n)) / m
    return v, T


def test_c02_mle_reduction(capsys):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        n, k, d = int(rng.integers(2, 51)), int(rng.integers(1, 6)), int(rng.integers(1, 9))
        f, t = _instance(rng, n, k, d)
        z = rng.dirichlet(np.full(k, rng.uniform(0.2, 3.0)), size=n)
        anchor = AnchorDistribution(t, rng.uniform(0.01, 0.5, d))
        bank = update_parameters(f, z, anchor, compute_beta(z, 0.0, "soft"))
        v, T = _eq9_by_loops(f, z)
        T = np.maximum(T, 1e-12)  # the variance floor; d=1 unit features can have zero spread
        worst = max(worst, np.max(np.abs(bank.mu - v) / np.abs(v).clip(1e-300)),
                    np.max(np.abs(bank.sigma - T) / T))
    report(2, worst <= 1e-12, f"100 instances, max relative error {worst:.2e}", capsys)


def test_c03_anchor_limit(capsys):
    rng = np.random.default_rng(11)
    worst_dist = 0.0
    exact = True
    for _ in range(100):
        n, k, d = int(rng.integers(2, 60)), int(rng.integers(2, 8)), int(rng.integers(2, 10))
        f, t = _instance(rng, n, k, d)
        res = solve(f, t, SolverConfig(affinity=str(rng.choice(["knn", "full"]))).with_anchor(alpha=1e12))
        empty = np.bincount(res.predictions, minlength=k) == 0
        for c in np.flatnonzero(empty):
            exact &= bool(np.array_equal(res.bank.mu[c], res.anchor.mu_prime[c]))
            exact &= bool(np.array_equal(res.bank.sigma[c], res.anchor.sigma_prime))
        worst_dist = max(worst_dist, np.linalg.norm(res.bank.mu - res.anchor.mu_prime, axis=1).max())
    report(3, exact and worst_dist <= 1e-3,
           f"100 instances, empty classes exact={exact}, max |mu-mu'| = {worst_dist:.2e}", capsys)


def test_c04_simplex_fuzzing(monkeypatch, capsys):
    seen = []
    real = solver_mod.z_update_sweep

    def spy(*a, **kw):
        out = real(*a, **kw)
        seen.append((out.min(), np.abs(out.sum(axis=1) - 1.0).max()))
        return out

    monkeypatch.setattr(solver_mod, "z_update_sweep", spy)
    rng = np.random.default_rng(99)
    for _ in range(1000):
        n, k, d = int(rng.integers(1, 40)), int(rng.integers(1, 8)), int(rng.integers(1, 12))
        f, t = _instance(rng, n, k, d)
        cfg = SolverConfig(affinity=str(rng.choice(["knn", "full", "none"])), outer_iters=int(rng.integers(1, 6)),
                           knn=int(rng.integers(1, 6)), tau=float(rng.choice([1.0, 30.0, 100.0])))
        cfg = cfg.with_anchor(alpha=float(rng.choice([0.0, 1.0, 10.0])), beta_mode=str(rng.choice(["hard", "soft"])))
        solve(f, t, cfg)
    lo = min(s[0] for s in seen)
    dev = max(s[1] for s in seen)
    report(4, lo >= 0 and dev <= 1e-9, f"1000 solves, {len(seen)} sweeps, min z {lo:.1e}, max |sum-1| {dev:.1e}",
           capsys)


def test_c05_monotone_objective(capsys):
    rng = np.random.default_rng(5)
    worst = -np.inf
    for _ in range(50):
        n, k, d = int(rng.integers(2, 201)), int(rng.integers(2, 8)), int(rng.integers(2, 16))
        f, t = _instance(rng, n, k, d)
        cfg = SolverConfig(affinity="full", record_trace=True, z_tolerance=0.0,
                           tau=float(rng.choice([10.0, 100.0]))).with_anchor(beta_mode="soft")
        tr = np.array(solve(f, t, cfg).objective_trace)
        worst = max(worst, np.max(np.diff(tr)))
    report(5, worst <= 1e-8, f"50 instances, largest per-step increase {worst:.2e}", capsys)


def test_c06_synthetic_recovery(capsys):
    start = time.perf_counter()
    gaps, lifts = [], []
    for seed in range(20):
        _, data, zs = tune_anchor_noise(SyntheticSpec(k=10, d=32, n_per_class=100, center_separation=6.0, seed=seed))
        acc = accuracy(solve(data.features, data.anchors).z, data.labels)
        gaps.append(acc - data.bayes_accuracy)
        lifts.append(acc - zs)
    elapsed = time.perf_counter() - start
    ok = min(gaps) >= -0.02 and min(lifts) > 0 and elapsed < 60
    report(6, ok, f"20 seeds, worst acc-bayes {min(gaps):+.3f}, worst acc-zeroshot {min(lifts):+.3f}, "
                  f"{elapsed:.1f}s", capsys)


def test_c07_empty_classes(capsys):
    k = 50
    absent_mass = np.zeros(k)
    total = 0
    worst = np.inf
    scenario = BatchScenario("Low", (5, 5), 64)
    for seed in range(20):
        _, data, _ = tune_anchor_noise(SyntheticSpec(k=k, d=32, n_per_class=100, center_separation=6.0, seed=seed))
        task = sample_batch_task(data.labels, scenario, np.random.default_rng(1000 + seed))
        f, y = data.features.data[task.indices], data.labels[task.indices]
        res = solve(f, data.anchors)
        counts = np.bincount(res.predictions, minlength=k)
        absent = ~np.isin(np.arange(k), task.effective_classes)
        absent_mass += np.where(absent, counts, 0)
        total += len(y)
        worst = min(worst, accuracy(res.z, y) - accuracy(zero_shot_predict(f, data.anchors), y))
    share = absent_mass.max() / total
    report(7, share <= 0.01 and worst >= -0.005,
           f"20 seeds, max absent-class share {share:.4f}, worst acc-zeroshot {worst:+.3f}", capsys)


def test_c08_online_accumulators(capsys):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(50):
        n, k, d = int(rng.integers(10, 200)), int(rng.integers(1, 8)), int(rng.integers(1, 16))
        f, t = _instance(rng, n, k, d)
        z = rng.dirichlet(np.ones(k), size=n)
        cuts = np.sort(rng.choice(np.arange(1, n), size=int(rng.integers(1, min(10, n - 1) + 1)), replace=False))
        state = stream_init(t, f[: cuts[0]])
        mu = state.bank.mu.copy()
        for lo, hi in zip(np.r_[0, cuts], np.r_[cuts, n]):
            fold_batch(state, f[lo:hi], z[lo:hi])
        m = z.sum(0)
        v = (z.T @ f) / m[:, None]
        T = np.einsum("ik,ikj->kj", z, (f[:, None] - mu[None]) ** 2) / m[:, None]
        worst = max(worst, np.max(np.abs(state.v - v) / np.abs(v)), np.max(np.abs(state.T - T) / T),
                    np.max(np.abs(state.Z - m) / m))
    report(8, worst <= 1e-6, f"50 random splits, max relative error {worst:.2e}", capsys)


def test_c09_stream_statistics(capsys):
    cases = [(10, 1000, 128, 7), (10, 10_000, 128, 10), (100, 1000, 64, 15), (3, 128, 128, 1)]
    slots_ok = all(slot_count(k, n, bs) == want for k, n, bs, want in cases)
    y = np.repeat(np.arange(10), 1000)
    pools = _class_pools(y, 10)
    s = slot_count(10, y.size, 128)
    tv, heavy = [], []
    for seed in range(50):
        for slot in dirichlet_slots(pools, s, 100.0, np.random.default_rng(seed)):
            p = np.bincount(y[slot], minlength=10) / slot.size
            tv.append(0.5 * np.abs(p - 0.1).sum())
        counts = np.array([np.bincount(y[sl], minlength=10)
                           for sl in dirichlet_slots(pools, s, 0.001, np.random.default_rng(seed))])
        heavy.append(np.mean(counts.max(axis=0) / counts.sum(axis=0)))
    ok = slots_ok and np.mean(tv) <= 0.1 and np.mean(heavy) >= 0.95
    report(9, ok, f"slot counts exact={slots_ok}, gamma=100 mean TV {np.mean(tv):.4f}, "
                  f"gamma=0.001 heaviest-slot share {np.mean(heavy):.4f}", capsys)


RUNTIME_SCRIPT = textwrap.dedent("""
    import time, numpy as np
    from stata.solver import solve, SolverConfig
    rng = np.random.default_rng(0)
    k, d, n = 1000, 512, 50_000
    t = rng.standard_normal((k, d)); t /= np.linalg.norm(t, axis=1, keepdims=True)
    lab = rng.integers(0, k, n)
    f = t[lab] + 0.045 * rng.standard_normal((n, d)); f /= np.linalg.norm(f, axis=1, keepdims=True)
    start = time.perf_counter()
    res = solve(f, t, SolverConfig(knn=3))
    print(time.perf_counter() - start, res.iterations_run, float(np.mean(res.predictions == lab)))
""")


@pytest.mark.slow
def test_c10_runtime(capsys):
    env = dict(os.environ, OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1", MKL_NUM_THREADS="1")
    out = subprocess.run([sys.executable, "-c", RUNTIME_SCRIPT], capture_output=True, text=True, env=env,
                         timeout=1200)
    assert out.returncode == 0, out.stderr
    elapsed, iters, acc = out.stdout.split()
    elapsed = float(elapsed)
    report(10, elapsed <= 120, f"N=50000 d=512 K=1000 knn=3 single thread: {elapsed:.1f}s "
                               f"({iters} outer iterations, accuracy {float(acc):.3f})", capsys)


def test_c11_beta_ablation(tmp_path, capsys):
    _, data, _ = tune_anchor_noise(SyntheticSpec(k=10, d=32, n_per_class=100, seed=1))
    save_embeddings(tmp_path / "f.emb", data.features)
    save_embeddings(tmp_path / "t.emb", data.anchors)
    save_labels(tmp_path / "y.txt", data.labels)
    out = tmp_path / "ablation.json"
    rc = cli_main(["bench", "--features", str(tmp_path / "f.emb"), "--anchors", str(tmp_path / "t.emb"),
                   "--labels", str(tmp_path / "y.txt"), "--scenario", "low", "--n-tasks", "20", "--seed", "3",
                   "--beta-mode", "both", "--output", str(out)])
    doc = json.loads(out.read_text()) if rc == 0 else {}
    ok = (rc == 0 and set(doc) == {"hard", "soft"}
          and doc["hard"]["zero_shot_per_task"] == doc["soft"]["zero_shot_per_task"]
          and len(doc["hard"]["per_task_accuracy"]) == len(doc["soft"]["per_task_accuracy"]) == 20)
    detail = (f"hard {doc['hard']['mean_accuracy']:.4f}, soft {doc['soft']['mean_accuracy']:.4f}, "
              f"zero-shot {doc['hard']['zero_shot_mean']:.4f} on the same 20 tasks") if ok else f"exit {rc}"
    report(11, ok, detail, capsys)


if __name__ == "__main__":
    import contextlib
    import inspect
    import tempfile
    from pathlib import Path

    class _NoCapture:
        def disabled(self):
            return contextlib.nullcontext()

    class _Patch:
        def __init__(self):
            self.undo = []

        def setattr(self, obj, name, value):
            self.undo.append((obj, name, getattr(obj, name)))
            setattr(obj, name, value)

    for name, fn in sorted(globals().items()):
        if not name.startswith("test_c"):
            continue
        patch = _Patch()
        with tempfile.TemporaryDirectory() as tmp:
            pool = {"capsys": _NoCapture(), "monkeypatch": patch, "tmp_path": Path(tmp)}
            try:
                fn(**{arg: pool[arg] for arg in inspect.signature(fn).parameters})
            except AssertionError:
                pass
            finally:
                for obj, attr, old in reversed(patch.undo):
                    setattr(obj, attr, old)
    sys.exit(1 if any("FAIL" in line for line in RESULTS.values()) else 0)
