"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import beta_ablation, run_batch_benchmark, run_stream_benchmark
from .embeddings import (
    FormatError,
    ValidationError,
    check_labels,
    load_anchors,
    load_embeddings,
    load_labels,
    save_embeddings,
    save_labels,
)
from .gaussian import VARIANCE_FLOOR, AnchorConfig
from .online import run_stream
from .scenarios import BatchScenario, StreamScenario, Task, generate_tasks
from .solver import SolverConfig, solve
from .synthetic import SyntheticSpec, generate_synthetic, tune_anchor_noise
from .zeroshot import DEFAULT_TAU, zero_shot_predict

log = logging.getLogger("stata")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
BATCH_SCENARIOS = ("verylow", "low", "medium", "high", "veryhigh", "all", "custom")
STREAM_SCENARIOS = ("dirichlet", "separate")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_solver_flags(p: argparse.ArgumentParser, beta_choices=("hard", "soft")) -> None:
    g = p.add_argument_group("solver")
    g.add_argument("--alpha", type=float, default=1.0, help="anchor weight")
    g.add_argument("--tau", type=float, default=DEFAULT_TAU, help="zero-shot softmax temperature")
    g.add_argument("--affinity", choices=("knn", "full", "none"), default="knn", help="Laplacian graph")
    g.add_argument("--knn", type=int, default=3, help="neighbors per sample in knn mode")
    g.add_argument("--outer-iters", type=int, default=10, help="outer iterations")
    g.add_argument("--inner-iters", type=int, default=3, help="z sweeps per outer iteration")
    g.add_argument("--z-tol", type=float, default=1e-4, help="stop when max |dz| over an outer iteration is below this")
    g.add_argument("--beta-mode", choices=beta_choices, default="hard",
                   help="class-mass estimate for beta" + ("; 'both' runs hard and soft on the same tasks"
                                                          if "both" in beta_choices else ""))
    g.add_argument("--variance-floor", type=float, default=VARIANCE_FLOOR, help="minimum covariance entry")


def _add_scenario_flags(p: argparse.ArgumentParser, default_tasks: int) -> None:
    g = p.add_argument_group("scenario")
    g.add_argument("--scenario", choices=BATCH_SCENARIOS + STREAM_SCENARIOS, default="low",
                   help="batch K_eff preset, 'custom' range, or stream mode")
    g.add_argument("--keff-min", type=int, default=None, help="custom K_eff lower bound (with --scenario custom)")
    g.add_argument("--keff-max", type=int, default=None, help="custom K_eff upper bound (with --scenario custom)")
    g.add_argument("--gamma", type=float, default=None, help="Dirichlet concentration for --scenario dirichlet; None means 0.1")
    g.add_argument("--batch-size", type=int, default=None, help="samples per batch; None means 64 for batch scenarios, 128 for streams")
    g.add_argument("--n-tasks", type=int, default=default_tasks, help="number of tasks")
    g.add_argument("--seed", type=int, default=0, help="random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stata", description="Statistical-anchor test-time adaptation of vision-language embeddings.",
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", default=False, help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("adapt", help="batch transductive solve", formatter_class=fmt)
    p.add_argument("--features", required=True, help="EMB1 query features")
    p.add_argument("--anchors", required=True, help="EMB1 class text embeddings")
    p.add_argument("--task", default=None, help="task JSON; solve only its indices")
    p.add_argument("--trace-objective", action="store_true", default=False, help="record the objective after every block update")
    p.add_argument("--output", default=None, help="output path (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="json adds full z rows")
    _add_solver_flags(p)

    p = sub.add_parser("stream", help="online adaptation over a stream", formatter_class=fmt)
    p.add_argument("--features", required=True, help="EMB1 query features")
    p.add_argument("--anchors", required=True, help="EMB1 class text embeddings")
    p.add_argument("--task", default=None, help="stream task JSON (default: file order)")
    p.add_argument("--batch-size", type=int, default=128, help="batch size when no --task is given")
    p.add_argument("--refine-iters", type=int, default=1, help="z passes per batch before committing")
    p.add_argument("--output", default=None, help="output path (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="json adds full z rows")
    _add_solver_flags(p)

    p = sub.add_parser("gen-tasks", help="generate scenario task files", formatter_class=fmt)
    p.add_argument("--labels", required=True, help="label file, one class index per line")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--num-classes", type=int, default=None, help="K (default: max label + 1)")
    _add_scenario_flags(p, default_tasks=1000)

    p = sub.add_parser("synth", help="write a synthetic dataset", formatter_class=fmt)
    p.add_argument("--k", type=int, default=10, help="classes")
    p.add_argument("--d", type=int, default=32, help="dimension")
    p.add_argument("--n-per-class", type=int, default=100, help="samples per class")
    p.add_argument("--separation", type=float, default=6.0, help="minimum center distance in within-class stds")
    p.add_argument("--offset", type=float, default=20.0, help="shared center component in within-class stds")
    noise = p.add_mutually_exclusive_group()
    noise.add_argument("--anchor-noise", type=float, default=None, help="anchor perturbation std; None means 0")
    noise.add_argument("--tune-zero-shot", type=float, nargs=2, metavar=("LO", "HI"), default=None,
                       help="bisect anchor noise until zero-shot accuracy is in [LO, HI]")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--dtype", choices=("f32", "f64"), default="f32", help="on-disk float width")
    p.add_argument("--output", required=True, help="output directory")

    p = sub.add_parser("eval", help="score a prediction CSV against labels", formatter_class=fmt)
    p.add_argument("--predictions", required=True, help="CSV with index and predicted_class columns")
    p.add_argument("--labels", required=True, help="label file")
    p.add_argument("--output", default=None, help="output path (default: stdout)")

    p = sub.add_parser("bench", help="end-to-end scenario benchmark", formatter_class=fmt)
    p.add_argument("--features", required=True, help="EMB1 query features")
    p.add_argument("--anchors", required=True, help="EMB1 class text embeddings")
    p.add_argument("--labels", required=True, help="label file")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--output", default=None, help="output path (default: stdout)")
    p.add_argument("--format", choices=("json", "csv"), default="json", help="json report or per-task csv")
    _add_scenario_flags(p, default_tasks=100)
    _add_solver_flags(p, beta_choices=("hard", "soft", "both"))
    return parser


def solver_config(args, record_trace: bool = False) -> SolverConfig:
    try:
        return SolverConfig(
            outer_iters=args.outer_iters,
            inner_z_iters=args.inner_iters,
            z_tolerance=args.z_tol,
            affinity=args.affinity,
            knn=args.knn,
            anchor=AnchorConfig(alpha=args.alpha, beta_mode=args.beta_mode if args.beta_mode != "both" else "hard",
                                variance_floor=args.variance_floor),
            tau=args.tau,
            record_trace=record_trace,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def scenario_from_args(args):
    name = args.scenario
    if name in STREAM_SCENARIOS:
        if args.keff_min is not None or args.keff_max is not None:
            raise UsageError("--keff-min/--keff-max only apply to --scenario custom")
        if name == "separate" and args.gamma is not None:
            raise UsageError("--gamma only applies to --scenario dirichlet")
        try:
            return StreamScenario(gamma=0.1 if args.gamma is None else args.gamma,
                                  batch_size=args.batch_size or 128, n_tasks=args.n_tasks,
                                  seed=args.seed, mode=name)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if args.gamma is not None:
        raise UsageError("--gamma only applies to --scenario dirichlet")
    bs = args.batch_size or 64
    if name == "custom":
        if args.keff_min is None or args.keff_max is None:
            raise UsageError("--scenario custom needs --keff-min and --keff-max")
        if not 1 <= args.keff_min <= args.keff_max:
            raise UsageError("need 1 <= --keff-min <= --keff-max")
        return BatchScenario("Custom", (args.keff_min, args.keff_max), bs, args.n_tasks, args.seed)
    if args.keff_min is not None or args.keff_max is not None:
        raise UsageError("--keff-min/--keff-max only apply to --scenario custom")
    return BatchScenario.preset(name, batch_size=bs, n_tasks=args.n_tasks, seed=args.seed)


def _open_output(path):
    if path is None:
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline=""), True


def write_predictions(z: np.ndarray, indices: np.ndarray, path, fmt: str, extra: dict | None = None) -> None:
    pred = np.argmax(z, axis=1)
    maxp = z[np.arange(z.shape[0]), pred]
    out, close = _open_output(path)
    try:
        if fmt == "csv":
            w = csv.writer(out, lineterminator="\n")
            w.writerow(["index", "predicted_class", "max_prob"])
            for i, c, p in zip(indices, pred, maxp):
                w.writerow([int(i), int(c), repr(float(p))])
        else:
            doc = {"predictions": [
                {"index": int(i), "predicted_class": int(c), "max_prob": float(p), "z": row.tolist()}
                for i, c, p, row in zip(indices, pred, maxp, z)
            ]}
            doc.update(extra or {})
            json.dump(doc, out)
            out.write("\n")
    finally:
        if close:
            out.close()


def read_prediction_csv(path) -> tuple[np.ndarray, np.ndarray]:
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or "predicted_class" not in rows[0] or "index" not in rows[0]:
        raise FormatError(f"{path}: expected columns index,predicted_class")
    try:
        idx = np.array([int(r["index"]) for r in rows], dtype=np.int64)
        pred = np.array([int(r["predicted_class"]) for r in rows], dtype=np.int64)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    return idx, pred


def _load_pair(args):
    feats = load_embeddings(args.features)
    anchors = load_anchors(args.anchors, d=feats.d)
    return feats, anchors


def cmd_adapt(args) -> int:
    cfg = solver_config(args, record_trace=args.trace_objective)
    feats, anchors = _load_pair(args)
    indices = np.arange(feats.n)
    if args.task:
        indices = Task.load(args.task).indices
        if indices.size == 0 or indices.min() < 0 or indices.max() >= feats.n:
            raise ValidationError("task indices out of range for the feature file")
    res = solve(feats.data[indices], anchors.data, cfg)
    extra = {"iterations_run": res.iterations_run}
    if args.trace_objective:
        extra["objective_trace"] = res.objective_trace
        log.info("objective trace: %s", res.objective_trace)
    write_predictions(res.z, indices, args.output, args.format, extra)
    return EXIT_OK


def cmd_stream(args) -> int:
    cfg = solver_config(args)
    if args.refine_iters < 1 or args.batch_size < 1:
        raise UsageError("--refine-iters and --batch-size must be >= 1")
    feats, anchors = _load_pair(args)
    if args.task:
        task = Task.load(args.task)
        indices, bounds = task.indices, task.batch_boundaries
        if indices.size and (indices.min() < 0 or indices.max() >= feats.n):
            raise ValidationError("task indices out of range for the feature file")
    else:
        indices = np.arange(feats.n)
        bounds = list(range(0, feats.n, args.batch_size)) + [feats.n]
    z = run_stream(anchors.data, feats.data[indices], bounds, cfg, args.refine_iters)
    write_predictions(z, indices, args.output, args.format)
    return EXIT_OK


def cmd_gen_tasks(args) -> int:
    scenario = scenario_from_args(args)
    labels = load_labels(args.labels)
    k = args.num_classes or int(labels.max()) + 1
    check_labels(labels, k)
    tasks = generate_tasks(labels, scenario, k=k)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(tasks) - 1)))
    for i, task in enumerate(tasks):
        task.save(out / f"task_{i:0{width}d}.json")
    log.info("wrote %d tasks to %s", len(tasks), out)
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        spec = SyntheticSpec(k=args.k, d=args.d, n_per_class=args.n_per_class,
                             center_separation=args.separation, anchor_noise=args.anchor_noise or 0.0,
                             seed=args.seed, offset=args.offset)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.tune_zero_shot:
        spec, data, _ = tune_anchor_noise(spec, tuple(args.tune_zero_shot))
    else:
        data = generate_synthetic(spec)
    zs = float(np.mean(np.argmax(zero_shot_predict(data.features, data.anchors), axis=1) == data.labels))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save_embeddings(out / "features.emb", data.features, args.dtype)
    save_embeddings(out / "anchors.emb", data.anchors, args.dtype)
    save_labels(out / "labels.txt", data.labels)
    meta = {"spec": spec.__dict__, "bayes_accuracy": data.bayes_accuracy, "zero_shot_accuracy": zs}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_eval(args) -> int:
    idx, pred = read_prediction_csv(args.predictions)
    labels = load_labels(args.labels)
    if idx.min() < 0 or idx.max() >= labels.size:
        raise ValidationError("prediction indices out of range for the label file")
    acc = float(np.mean(pred == labels[idx]))
    out, close = _open_output(args.output)
    try:
        json.dump({"accuracy": acc, "n": int(idx.size)}, out)
        out.write("\n")
    finally:
        if close:
            out.close()
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    scenario = scenario_from_args(args)
    cfg = solver_config(args)
    feats, anchors = _load_pair(args)
    labels = check_labels(load_labels(args.labels), anchors.k)
    if labels.size != feats.n:
        raise ValidationError(f"{labels.size} labels for {feats.n} feature rows")
    if args.beta_mode == "both":
        reports = beta_ablation(feats.data, anchors.data, labels, scenario, cfg, args.jobs)
    else:
        runner = run_stream_benchmark if isinstance(scenario, StreamScenario) else run_batch_benchmark
        reports = {args.beta_mode: runner(feats.data, anchors.data, labels, scenario, cfg, args.jobs)}
    for mode, rep in reports.items():
        log.info("beta=%s mean accuracy %.4f (zero-shot %.4f)", mode, rep.mean_accuracy, rep.zero_shot_mean)
    out, close = _open_output(args.output)
    try:
        if args.format == "csv":
            w = csv.writer(out, lineterminator="\n")
            w.writerow(["beta_mode", "task", "accuracy", "zero_shot_accuracy"])
            for mode, rep in reports.items():
                for i, (a, z) in enumerate(zip(rep.per_task_accuracy, rep.zero_shot_per_task)):
                    w.writerow([mode, i, f"{a:.6f}", f"{z:.6f}"])
        elif len(reports) == 1:
            out.write(next(iter(reports.values())).to_json() + "\n")
        else:
            doc = {mode: json.loads(rep.to_json()) for mode, rep in reports.items()}
            out.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    finally:
        if close:
            out.close()
    return EXIT_OK


COMMANDS = {
    "adapt": cmd_adapt,
    "stream": cmd_stream,
    "gen-tasks": cmd_gen_tasks,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"stata {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ValidationError, ValueError, FloatingPointError, OSError) as exc:
        print(f"stata {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
