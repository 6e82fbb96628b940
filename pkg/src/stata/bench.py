"""End-to-end scenario runs and independent numerical oracles."""
from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .online import run_stream
from .scenarios import BatchScenario, StreamScenario, Task, generate_tasks
from .solver import SolverConfig, solve
from .synthetic import SyntheticSpec, generate_synthetic, tune_anchor_noise  # noqa: F401
from .zeroshot import zero_shot_predict


@dataclass
class RunReport:
    per_task_accuracy: list[float]
    mean_accuracy: float
    zero_shot_per_task: list[float]
    zero_shot_mean: float
    delta_vs_zeroshot: float
    wall_time_seconds: float
    config_snapshot: dict = field(default_factory=dict)

    @classmethod
    def from_tasks(cls, acc, zs, wall, config) -> "RunReport":
        if not acc:
            raise ValueError("empty scenario")
        mean, zs_mean = float(np.mean(acc)), float(np.mean(zs))
        return cls(list(map(float, acc)), mean, list(map(float, zs)), zs_mean,
                   accuracy_delta(mean, zs_mean), wall, config)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "accuracy", "zero_shot_accuracy"])
        for i, (a, z) in enumerate(zip(self.per_task_accuracy, self.zero_shot_per_task)):
            w.writerow([i, f"{a:.6f}", f"{z:.6f}"])
        return buf.getvalue()


def accuracy_delta(method: float, baseline: float) -> float:
    return float(method) - float(baseline)


def _score(pred_z: np.ndarray, yhat: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    return (float(np.mean(np.argmax(pred_z, axis=1) == labels)),
            float(np.mean(np.argmax(yhat, axis=1) == labels)))


def _batch_worker(args):
    features, anchors, labels, task, cfg = args
    idx = task.indices
    res = solve(features[idx], anchors, cfg)
    return _score(res.z, res.yhat, labels[idx])


def _stream_worker(args):
    features, anchors, labels, task, cfg = args
    idx = task.indices
    f = features[idx]
    z = run_stream(anchors, f, task.batch_boundaries, cfg)
    return _score(z, zero_shot_predict(f, anchors, cfg.tau), labels[idx])


def _run(worker, features, anchors, labels, tasks: list[Task], cfg: SolverConfig, jobs: int, snapshot: dict):
    if not tasks:
        raise ValueError("empty scenario")
    f = np.asarray(features, dtype=np.float64)
    t = np.asarray(anchors, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    work = [(f, t, y, task, cfg) for task in tasks]
    start = time.perf_counter()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(worker, work))
    else:
        scores = [worker(w) for w in work]
    wall = time.perf_counter() - start
    acc, zs = zip(*scores)
    return RunReport.from_tasks(list(acc), list(zs), wall, snapshot)


def run_batch_benchmark(features, anchors, labels, scenario: BatchScenario,
                        cfg: SolverConfig | None = None, jobs: int = 1,
                        tasks: list[Task] | None = None) -> RunReport:
    """Solve every task of a batch scenario independently and average accuracy over tasks.

    The solver always sees all K anchors, never the task's effective classes.
    """
    cfg = cfg or SolverConfig()
    if scenario.n_tasks < 1 and tasks is None:
        raise ValueError("empty scenario")
    k = np.asarray(anchors).shape[0]
    tasks = tasks if tasks is not None else generate_tasks(labels, scenario, k=k)
    snapshot = {"scenario": scenario.to_dict(), "solver": cfg.to_dict()}
    return _run(_batch_worker, features, anchors, labels, tasks, cfg, jobs, snapshot)


def run_stream_benchmark(features, anchors, labels, scenario: StreamScenario,
                         cfg: SolverConfig | None = None, jobs: int = 1,
                         tasks: list[Task] | None = None) -> RunReport:
    """Play each stream task through the online adapter; every emitted prediction counts."""
    cfg = cfg or SolverConfig()
    if scenario.n_tasks < 1 and tasks is None:
        raise ValueError("empty scenario")
    k = np.asarray(anchors).shape[0]
    tasks = tasks if tasks is not None else generate_tasks(labels, scenario, k=k)
    snapshot = {"scenario": scenario.to_dict(), "solver": cfg.to_dict()}
    return _run(_stream_worker, features, anchors, labels, tasks, cfg, jobs, snapshot)


def beta_ablation(features, anchors, labels, scenario, cfg: SolverConfig | None = None,
                  jobs: int = 1) -> dict[str, RunReport]:
    """Run the same seeded tasks with hard and with soft beta weighting."""
    cfg = cfg or SolverConfig()
    k = np.asarray(anchors).shape[0]
    tasks = generate_tasks(labels, scenario, k=k)
    runner = run_stream_benchmark if isinstance(scenario, StreamScenario) else run_batch_benchmark
    return {mode: runner(features, anchors, labels, scenario, cfg.with_anchor(beta_mode=mode), jobs, tasks)
            for mode in ("hard", "soft")}


def mc_kl_oracle(mu_p, sigma_p, mu_q, sigma_q, n_samples: int = 1_000_000,
                 rng: np.random.Generator | None = None, return_stderr: bool = False):
    """Monte-Carlo estimate of KL(p || q) for diagonal Gaussians.

    Samples from p and averages ``log p(x) - log q(x)``. Kept separate from
    the closed form so the two can check each other.
    """
    rng = rng or np.random.default_rng()
    mu_p, sigma_p = np.atleast_1d(np.asarray(mu_p, float)), np.atleast_1d(np.asarray(sigma_p, float))
    mu_q, sigma_q = np.atleast_1d(np.asarray(mu_q, float)), np.atleast_1d(np.asarray(sigma_q, float))
    if np.any(sigma_p <= 0) or np.any(sigma_q <= 0) or not np.all(np.isfinite(np.r_[sigma_p, sigma_q])):
        raise ValueError("variances must be positive and finite")
    d = mu_p.size
    total = 0.0
    total_sq = 0.0
    chunk = 250_000
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        x = mu_p + np.sqrt(sigma_p) * rng.standard_normal((m, d))
        lp = -0.5 * np.sum(np.log(2 * np.pi * sigma_p) + (x - mu_p) ** 2 / sigma_p, axis=1)
        lq = -0.5 * np.sum(np.log(2 * np.pi * sigma_q) + (x - mu_q) ** 2 / sigma_q, axis=1)
        r = lp - lq
        total += r.sum()
        total_sq += np.dot(r, r)
        done += m
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0)
    stderr = float(np.sqrt(var / n_samples))
    return (float(mean), stderr) if return_stderr else float(mean)

