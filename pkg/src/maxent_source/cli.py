"""Command-line front end.

Exit codes: 0 success, 2 usage or config error, 3 I/O error, 4 divergence or
all runs failed, 5 format-version mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, env_seed, load_experiment
from .errors import DivergenceError, FormatVersionError
from .evaluation import evaluate_sampler, time_series_percentiles, write_percentile_csv
from .evaluation import DEFAULT_PERCENTILES
from .numcore import RngStream
from .simulators import Dataset, generate_dataset, get_task
from .surrogate import Surrogate, SurrogateRejected, SurrogateSpec, train_surrogate
from .training import DEFAULT_GRID, FORMAT_VERSION, RunResult, parse_lambda, read_sweep_csv, sweep, train

log = logging.getLogger("maxent_source")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED, EXIT_VERSION = 0, 2, 3, 4, 5


class UsageError(ValueError):
    pass


# shared plumbing ------------------------------------------------------------------


def resolve_seed(flag, config_value=None) -> int:
    """--seed beats the config file, which beats SOURCERER_SEED, which beats 0."""
    if flag is not None:
        return flag
    if config_value is not None:
        return config_value
    return env_seed(0)


def lambda_tag(lam) -> str:
    return "none" if lam is None else f"{lam:.6g}"


def _base_task(exp: ExperimentConfig):
    return get_task(exp.task, **exp.task_options)


def _simulator(exp: ExperimentConfig, task):
    if exp.mode == "surrogate":
        return Surrogate.load(exp.surrogate, base=task)
    return task


def materialize_dataset(exp: ExperimentConfig, task) -> Dataset:
    """Load the configured dataset, generating (and saving) it when missing."""
    path = exp.dataset_path
    if path is not None and path.exists():
        ds = Dataset.load(path)
        if ds.task != task.name:
            raise ConfigError(f"dataset {path} was generated for task {ds.task!r}, config says {task.name!r}")
        return ds
    seed = exp.dataset_seed if exp.dataset_seed is not None else env_seed(0)
    ds = generate_dataset(task, exp.dataset_n, seed)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        ds.save(path)
    return ds


def _snapshot(exp: ExperimentConfig, ds: Dataset) -> dict:
    """Top-level config keys that make a run directory self-contained."""
    d = exp.to_dict()
    d["dataset"] = {k: v for k, v in d["dataset"].items()}
    d["dataset"].setdefault("n", ds.n)
    d["dataset"]["seed"] = ds.seed
    if "path" in d["dataset"]:
        d["dataset"]["path"] = str(Path(d["dataset"]["path"]).resolve())
    if exp.surrogate is not None:
        d["surrogate"] = str(Path(exp.surrogate).resolve())
    d["output_dir"] = str(Path(exp.output_dir).resolve())
    return d


def _load_experiment(args) -> ExperimentConfig:
    exp = load_experiment(args.config)
    seed = resolve_seed(args.seed, exp.train.seed if exp.seed_in_file else None)
    return replace(exp, train=replace(exp.train, seed=seed))


def _parse_grid(text: str) -> list[float]:
    if text == "default":
        return list(DEFAULT_GRID)
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--grid must be 'default' or a comma-separated list of numbers, got {text!r}") from None
    if not grid or any(not (0.0 <= g <= 1.0) for g in grid):
        raise UsageError("--grid values must lie in [0, 1]")
    return grid


# commands ------------------------------------------------------------------------


def cmd_generate(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be a positive integer")
    try:
        task = get_task(args.task)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    seed = resolve_seed(args.seed)
    ds = generate_dataset(task, args.n, seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds.save(out)
    if args.csv:
        ds.to_csv(args.csv)
    print(json.dumps(ds.manifest()))
    return EXIT_OK


def cmd_train(args) -> int:
    exp = _load_experiment(args)
    if args.no_entropy:
        exp = replace(exp, train=replace(exp.train, lambda_final=None))
    elif args.lam is not None:
        lam = parse_lambda(args.lam)
        if lam is not None and not 0.0 <= lam <= 1.0:
            raise UsageError("--lambda must lie in [0, 1]")
        exp = replace(exp, train=replace(exp.train, lambda_final=lam))
    task = _base_task(exp)
    ds = materialize_dataset(exp, task)
    sim = _simulator(exp, task)
    cfg = exp.train
    run_dir = Path(args.out) if args.out else exp.output_dir / f"run_lambda_{lambda_tag(cfg.lambda_final)}_seed{cfg.seed}"
    run = train(sim, ds, cfg, eval_task=task)
    log.info("entropy estimator invocations: %d", run.entropy_calls)
    run.save(run_dir, _snapshot(exp, ds))
    print(json.dumps({"run_dir": str(run_dir), **run.metrics_record()}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    exp = _load_experiment(args)
    if args.parallel < 1:
        raise UsageError("--parallel must be >= 1")
    grid = _parse_grid(args.grid)
    task = _base_task(exp)
    ds = materialize_dataset(exp, task)
    sim = _simulator(exp, task)
    out = Path(args.out) if args.out else exp.output_dir / f"sweep_seed{exp.train.seed}"
    rows = sweep(sim, ds, exp.train, grid, include_none=not args.no_none, out_dir=out,
                 parallel=args.parallel, eval_task=task, snapshot=_snapshot(exp, ds))
    ok = sum(not r["diverged"] for r in rows)
    print(json.dumps({"sweep_csv": str(out / "sweep.csv"), "runs": len(rows), "succeeded": ok}))
    if ok == 0:
        log.error("all %d runs failed", len(rows))
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_surrogate_train(args) -> int:
    try:
        task = get_task(args.task)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    if args.n_pairs < 10:
        raise UsageError("--n-pairs must be at least 10")
    spec = SurrogateSpec(max_epochs=args.max_epochs, patience=args.patience, rmse_ceiling=args.rmse_ceiling)
    seed = resolve_seed(args.seed)
    try:
        sur, report = train_surrogate(task, args.n_pairs, spec, RngStream(seed))
    except SurrogateRejected as exc:
        log.error("%s", exc)
        return EXIT_DIVERGED
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    sur.save(out)
    print(json.dumps({"surrogate": str(out), "seed": seed, **report}))
    return EXIT_OK


def _experiment_from_run(run_dir: Path) -> ExperimentConfig:
    return load_experiment(run_dir / "config.toml")


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run)
    if not (run_dir / "config.toml").exists():
        raise FileNotFoundError(f"{run_dir} is not a run directory (no config.toml)")
    exp = _experiment_from_run(run_dir)
    run = RunResult.load(run_dir)
    task = _base_task(exp)
    ds = materialize_dataset(exp, task)
    seed = resolve_seed(args.seed, run.config.seed)
    metrics = evaluate_sampler(run.sampler, task, ds, run.config.evaluation, seed)
    record = {"format_version": FORMAT_VERSION, "run_dir": str(run_dir), "seed": seed, **metrics}
    out = Path(args.out) if args.out else run_dir / f"evaluation_seed{seed}.json"
    out.write_text(json.dumps(record, indent=2) + "\n")
    print(json.dumps(record))
    return EXIT_OK


REPORT_METRICS = ("entropy", "swd", "c2st", "runtime_s")


def aggregate_sweeps(tables: list[list[dict]]) -> list[dict]:
    """Mean and population std per lambda over successful runs."""
    groups: dict = {}
    for rows in tables:
        for r in rows:
            groups.setdefault(r["lambda"], []).append(r)
    keyed = sorted(groups, key=lambda lam: (lam == "none", -(lam if lam != "none" else 0.0)))
    out = []
    for lam in keyed:
        rows = [r for r in groups[lam] if not r["diverged"]]
        rec = {"lambda": lam, "n_runs": len(rows), "n_failed": len(groups[lam]) - len(rows)}
        for m in REPORT_METRICS:
            vals = np.array([r[m] for r in rows], dtype=float)
            rec[f"{m}_mean"] = float(vals.mean()) if vals.size else math.nan
            rec[f"{m}_std"] = float(vals.std()) if vals.size else math.nan
        out.append(rec)
    return out


def write_report_csv(path, summary):
    cols = ["lambda", "n_runs", "n_failed"] + [f"{m}_{s}" for m in REPORT_METRICS for s in ("mean", "std")]
    with open(path, "w") as fh:
        fh.write(f"# format_version: {FORMAT_VERSION}\n")
        fh.write(",".join(cols) + "\n")
        for rec in summary:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in (rec[c] for c in cols)) + "\n")


def _sweep_csv_path(p: Path) -> Path:
    return p / "sweep.csv" if p.is_dir() else p


def cmd_report(args) -> int:
    if not args.sweeps and not args.runs:
        raise UsageError("give at least one --sweeps CSV or --runs directory")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.sweeps:
        tables = [read_sweep_csv(_sweep_csv_path(Path(p))) for p in args.sweeps]
        summary = aggregate_sweeps(tables)
        write_report_csv(out / "report.csv", summary)
        written.append(out / "report.csv")
        if not args.no_figures:
            from .plotting import plot_sweep

            written.append(plot_sweep(summary, out / "sweep.png"))
    for run_path in args.runs or []:
        run_dir = Path(run_path)
        exp = _experiment_from_run(run_dir)
        run = RunResult.load(run_dir)
        task = _base_task(exp)
        times = getattr(task, "times", None)
        if times is None:
            log.warning("%s: task %s has no time axis; no percentile curves", run_dir, task.name)
            continue
        ds = materialize_dataset(exp, task)
        seed = resolve_seed(args.seed, run.config.seed)
        tables = time_series_percentiles(run.sampler, task, ds, seed)
        for name, (obs, sim) in tables.items():
            stem = f"{run_dir.name}_{name}"
            write_percentile_csv(out / f"{stem}_observed.csv", times, obs)
            write_percentile_csv(out / f"{stem}_simulated.csv", times, sim)
            written += [out / f"{stem}_observed.csv", out / f"{stem}_simulated.csv"]
            if not args.no_figures:
                from .plotting import plot_percentiles

                written.append(plot_percentiles(times, obs, sim, out / f"{stem}.png", DEFAULT_PERCENTILES, name))
    print(json.dumps({"written": [str(p) for p in written]}))
    return EXIT_OK


# parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maxent-source", description="Maximum-entropy source distribution estimation.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a dataset from a task's original source")
    g.add_argument("--task", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--csv", help="also write the observations as CSV")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="estimate one source")
    t.add_argument("--config", required=True)
    lam = t.add_mutually_exclusive_group()
    lam.add_argument("--lambda", dest="lam", help="final lambda (overrides the config)")
    lam.add_argument("--no-entropy", action="store_true", help="distance-only run")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="run directory (default: <output_dir>/run_lambda_<v>_seed<s>)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="independent runs over a lambda grid")
    s.add_argument("--config", required=True)
    s.add_argument("--grid", default="default", help="'default' or comma-separated lambdas")
    s.add_argument("--parallel", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.add_argument("--no-none", action="store_true", help="skip the distance-only run")
    s.add_argument("--out", help="sweep directory (default: <output_dir>/sweep_seed<s>)")
    s.set_defaults(func=cmd_sweep)

    st = sub.add_parser("surrogate-train", help="fit a deterministic MLP surrogate")
    st.add_argument("--task", required=True)
    st.add_argument("--n-pairs", type=int, default=50000)
    st.add_argument("--seed", type=int)
    st.add_argument("--max-epochs", type=int, default=SurrogateSpec.max_epochs)
    st.add_argument("--patience", type=int, default=SurrogateSpec.patience)
    st.add_argument("--rmse-ceiling", type=float)
    st.add_argument("--out", required=True)
    st.set_defaults(func=cmd_surrogate_train)

    e = sub.add_parser("evaluate", help="recompute metrics for a run directory")
    e.add_argument("--run", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="aggregate sweeps and export percentile curves")
    r.add_argument("--sweeps", nargs="*", default=[], help="sweep CSVs or sweep directories")
    r.add_argument("--runs", nargs="*", default=[], help="run directories of time-series tasks")
    r.add_argument("--seed", type=int)
    r.add_argument("--no-figures", action="store_true", help="CSV only, skip PNG rendering")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FormatVersionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"error: run diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (KeyError, ValueError) as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
