"""Command-line entry point.

Exit codes: 0 success, 1 config error, 2 divergence, 3 verification failure.
Set ``COMFED_LOG_LEVEL`` to ``error``, ``info`` or ``debug``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import oracles, robust, runtime, tasks, telemetry
from .core import derive_stream
from .runtime import ConfigError

log = logging.getLogger("comfedl")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_FAILED = 0, 1, 2, 3


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True, default=_jsonable)
    sys.stdout.write("\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, bytes):
        return o.hex()
    raise TypeError(type(o).__name__)


def _load_config(path, overrides=(), seed=None) -> runtime.ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", str(exc)) from None
    cfg = telemetry.parse_config(text)
    extra = list(overrides or ())
    if seed is not None:
        extra.append(f"seed={seed}")
    return telemetry.apply_overrides(cfg, extra)


def execute(cfg: runtime.ExperimentConfig, out, checkpoint=None, timing=False, parallel=False) -> runtime.RunResult:
    """Build the task, run, stream metrics to ``out`` and checkpoint the final model."""
    task = telemetry.build_task(cfg)
    with telemetry.MetricsSink(out, timing=timing) as sink:
        result = runtime.run(task, cfg, parallel=parallel, timing=timing, callback=sink.write)
    ckpt = Path(checkpoint) if checkpoint else Path(str(out) + ".ckpt")
    telemetry.checkpoint_model(ckpt, result.w, telemetry.config_hash(cfg))
    return result


def _summary(result: runtime.RunResult) -> dict:
    fin = result.final
    return {
        "rounds": len(result.records),
        "diverged": result.diverged,
        "message": result.message,
        "final_objective": None if fin is None else fin.objective,
        "final_worst_loss": None if fin is None else fin.worst_loss,
        "final_grad_norm": None if fin is None else fin.grad_norm,
        "G_f": result.estimate.G_f,
        "G_g": result.estimate.G_g,
    }


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.set, args.seed)
    result = execute(cfg, args.out, args.checkpoint, args.timing, args.parallel)
    _emit({"config": telemetry.config_to_dict(cfg), "metrics": str(args.out), **_summary(result)})
    return EXIT_DIVERGED if result.diverged else EXIT_OK


def _sweep_one(job):
    cfg, out, timing = job
    result = execute(cfg, out, timing=timing)
    losses = [float(np.mean(r.client_losses)) for r in result.records]
    return {"diverged": result.diverged, "rounds": len(result.records), "mean_losses": losses,
            "final_objective": result.final.objective if result.final else None,
            "final_mean_loss": losses[-1] if losses else None,
            "final_worst_loss": result.final.worst_loss if result.final else None}


def cmd_sweep(args) -> int:
    base = _load_config(args.config, args.set, args.seed)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("values", "need at least one value")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    key = "task.rho" if args.param == "rho" else args.param
    jobs = []
    for v in values:
        cfg = telemetry.apply_overrides(base, [f"{key}={v}"])
        jobs.append((cfg, out_dir / f"{args.param}={v}.csv", False))
    if args.parallel:
        with ProcessPoolExecutor() as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(job) for job in jobs]
    finals = [r["final_mean_loss"] for r in rows if r["final_mean_loss"] is not None and not r["diverged"]]
    threshold = args.threshold if args.threshold is not None else (1.05 * max(finals) if finals else None)
    summary_path = out_dir / "summary.csv"
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([args.param, "rounds", "diverged", "final_objective", "final_mean_loss",
                         "final_worst_loss", "rounds_to_threshold"])
        for v, r in zip(values, rows):
            hit = None
            if threshold is not None:
                hit = next((k for k, loss in enumerate(r["mean_losses"]) if loss <= threshold), None)
            r["rounds_to_threshold"] = hit
            writer.writerow([v, r["rounds"], int(r["diverged"])] +
                            ["" if r[k] is None else format(r[k], ".17g")
                             for k in ("final_objective", "final_mean_loss", "final_worst_loss")] +
                            ["" if hit is None else hit])
    _emit({"param": args.param, "threshold": threshold, "summary": str(summary_path),
           "runs": [{"value": v, **{k: r[k] for k in r if k != "mean_losses"}} for v, r in zip(values, rows)]})
    return EXIT_DIVERGED if any(r["diverged"] for r in rows) else EXIT_OK


def cmd_verify_lemma1(args) -> int:
    rng = derive_stream(args.seed, 0, 0, 0, "verify-lemma1")
    report = robust.verify_lemma1(args.n, args.gamma, args.trials, rng)
    _emit(report.to_dict())
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_grad_check(args) -> int:
    rng = derive_stream(args.seed, 0, 0, 0, "task-data")
    task = tasks.make_task(args.task, args.n, args.gamma, rng, eta_in=args.eta_in)
    probe = derive_stream(args.seed, 0, 0, 0, "grad-check")
    report = oracles.check_task_gradients(task, args.points, probe, h=args.h)
    out = {"task": args.task, "estimator": report.to_dict(), "tolerance": args.tol}
    worst = report.max_rel_error
    if task.is_maml:
        vjp = oracles.GradCheckReport(0.0, -1, args.h)
        for _ in range(args.points):
            i = int(probe.integers(task.n))
            w = probe.standard_normal(task.d) / np.sqrt(task.d)
            v = probe.standard_normal(task.d)
            analytic = tasks.maml_inner_vjp(task, i, w, None, v)
            fd = oracles.finite_diff_grad(lambda x: tasks.maml_inner(task, i, x) @ v, w, args.h)
            vjp = vjp.merge(oracles.GradCheckReport(
                float(np.linalg.norm(analytic - fd) / max(1.0, np.linalg.norm(fd))),
                int(np.argmax(np.abs(analytic - fd))), args.h))
        out["inner_vjp"] = vjp.to_dict()
        worst = max(worst, vjp.max_rel_error)
    out["passed"] = worst <= args.tol
    _emit(out)
    return EXIT_OK if out["passed"] else EXIT_FAILED


def cmd_rate_fit(args) -> int:
    if args.input:
        with open(args.input, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        T = np.array([float(r["T"]) for r in rows])
        values = np.array([float(r["value"]) for r in rows])
    else:
        rng = derive_stream(args.seed, 0, 0, 0, "task-data")
        task = tasks.make_task(args.task, args.n, args.gamma, rng)
        Ts = np.unique(np.round(np.geomspace(args.tmin, args.tmax, args.points)).astype(int))
        T, values, _ = oracles.rate_experiment(task, Ts, tau=args.tau, seeds=range(args.seeds))
    slope, intercept = oracles.rate_fit(T, values)
    passed = slope <= args.max_slope
    _emit({"slope": slope, "intercept": intercept, "T": T, "values": values,
           "max_slope": args.max_slope, "passed": passed})
    return EXIT_OK if passed else EXIT_FAILED


def cmd_drift_check(args) -> int:
    if args.metrics:
        records = telemetry.read_metrics(args.metrics)
        report = runtime.drift_check(records)
    else:
        cfg = _load_config(args.config, args.set, args.seed)
        task = telemetry.build_task(cfg)
        result = runtime.run(task, cfg)
        if result.diverged:
            _emit({"diverged": True, "message": result.message})
            return EXIT_DIVERGED
        report = runtime.drift_check(result.records, result.estimate, cfg)
    _emit(report.to_dict())
    return EXIT_OK if report.passed else EXIT_FAILED


def _common(p, config_required=True):
    p.add_argument("--config", required=config_required, metavar="PATH", help="experiment config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry (repeatable)")
    p.add_argument("--seed", type=int, default=None, metavar="INT", help="override the experiment seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="comfedl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment and write per-round metrics")
    _common(p)
    p.add_argument("--out", required=True, metavar="PATH", help="metrics file (.csv or .jsonl)")
    p.add_argument("--checkpoint", metavar="PATH", help="final model checkpoint (default: OUT.ckpt)")
    p.add_argument("--timing", action="store_true", help="include the wall-clock column")
    p.add_argument("--parallel", action="store_true", help="run the sampled clients on a thread pool")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one run per value of tau, gamma or rho plus a summary table")
    _common(p)
    p.add_argument("--param", required=True, choices=("tau", "gamma", "rho"))
    p.add_argument("--values", required=True, metavar="CSV", help="comma-separated values")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    p.add_argument("--threshold", type=float, default=None,
                   help="mean-loss level for rounds_to_threshold (default: 1.05 x worst final mean loss)")
    p.add_argument("--parallel", action="store_true", help="run sweep entries in separate processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-lemma1", help="check minimax value == log-sum-exp value on random losses")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--gamma", type=float, default=0.2)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify_lemma1)

    p = sub.add_parser("grad-check", help="full-batch estimator vs central finite differences")
    p.add_argument("--task", default="quadratic-dro", choices=sorted(tasks.TASK_KINDS))
    p.add_argument("--n", type=int, default=4, help="clients")
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--eta-in", type=float, default=0.05, dest="eta_in")
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--h", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("rate-fit", help="log-log slope of the averaged squared gradient norm vs T")
    p.add_argument("--input", metavar="PATH", help="CSV with columns T,value (skips the experiment)")
    p.add_argument("--task", default="logistic-dro", choices=sorted(tasks.TASK_KINDS))
    p.add_argument("--n", type=int, default=10, help="clients")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--tmin", type=int, default=100)
    p.add_argument("--tmax", type=int, default=10000)
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--tau", type=int, default=2)
    p.add_argument("--seeds", type=int, default=1, help="seeds averaged per T")
    p.add_argument("--max-slope", type=float, default=-0.3, dest="max_slope")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_rate_fit)

    p = sub.add_parser("drift-check", help="squared client drift vs (tau eta G_g G_f)^2")
    _common(p, config_required=False)
    p.add_argument("--metrics", metavar="PATH", help="check a metrics file instead of running --config")
    p.set_defaults(func=cmd_drift_check)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("COMFED_LOG_LEVEL", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "drift-check" and not (args.metrics or args.config):
        parser.error("drift-check needs --metrics or --config")
    try:
        return args.func(args)
    except (ConfigError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
