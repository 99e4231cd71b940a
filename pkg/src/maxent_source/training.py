"""Penalty-scheduled maximum-entropy source estimation.

Each iteration minimizes

    lam * KL(q || p) + (1 - lam) * log(SWD(q#, data)^2 + eps)

where ``lam`` decays linearly from 1 to its final value. With a uniform
reference on the parameter box, ``KL(q || p) = -H(q) + log |box|``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import tomli_w

from . import entropy as _entropy
from .errors import DivergenceError, FormatVersionError
from .evaluation import EvalConfig, evaluate_sampler
from .numcore import AdamState, RngStream
from .sampler import SourceSampler
from .swd import swd_backward, swd_forward

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_GRID = tuple(2.0 ** (-j / 2) for j in range(15))


def lambda_schedule(step: int, decay_steps: int, lambda_final: float) -> float:
    """Linear decay from 1 at step 0 to ``lambda_final`` at ``decay_steps``."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if decay_steps <= 0 or step >= decay_steps:
        return float(lambda_final)
    return 1.0 + (lambda_final - 1.0) * step / decay_steps


@dataclass
class TrainConfig:
    lambda_final: float | None = 0.35  # None: distance term only
    decay_steps: int = 500
    max_iter: int = 10000
    lr: float = 1e-4
    weight_decay: float = 1e-5
    entropy_batch: int = 512
    sim_batch: int = 512
    n_projections: int = 64
    patience: int = 300
    k: int = 3
    reference: str = "uniform"  # or "gaussian"
    reference_mean: list | None = None
    reference_std: list | None = None
    hidden: tuple = (100, 100, 100)
    eps_num: float = 1e-30
    seed: int = 0
    stream: int = 0
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.lambda_final is not None and not 0.0 <= self.lambda_final <= 1.0:
            raise ValueError("lambda_final must lie in [0, 1] or be None")
        if self.decay_steps > self.max_iter:
            raise ValueError("decay_steps must not exceed max_iter")
        if self.entropy_batch < 2 or self.sim_batch < 2:
            raise ValueError("batch sizes must be >= 2")
        if self.reference not in ("uniform", "gaussian"):
            raise ValueError(f"unknown reference {self.reference!r}")
        if self.reference == "gaussian" and (self.reference_mean is None or self.reference_std is None):
            raise ValueError("gaussian reference needs reference_mean and reference_std")
        self.hidden = tuple(self.hidden)

    @property
    def entropy_enabled(self) -> bool:
        return self.lambda_final is not None

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "evaluation"}
        d["lambda_final"] = "none" if self.lambda_final is None else self.lambda_final
        d["hidden"] = list(self.hidden)
        for key in ("reference_mean", "reference_std"):
            if d[key] is None:
                del d[key]
        d["evaluation"] = self.evaluation.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown training option(s): {', '.join(sorted(unknown))}")
        if "lambda_final" in d:
            d["lambda_final"] = parse_lambda(d["lambda_final"])
        if "evaluation" in d:
            d["evaluation"] = EvalConfig.from_dict(d["evaluation"])
        return cls(**d)


def parse_lambda(value) -> float | None:
    if value is None or (isinstance(value, str) and value.strip().lower() in ("none", "na")):
        return None
    return float(value)


@dataclass
class LossTerms:
    total: float
    distance: float
    kl: float


class Reference:
    """Cross-entropy ``-E_q[log p(theta)]`` of the reference and its gradient."""

    def __init__(self, cfg: TrainConfig, lo, hi):
        self.kind = cfg.reference
        self.log_volume = float(np.sum(np.log(np.asarray(hi) - np.asarray(lo))))
        if self.kind == "gaussian":
            self.mean = np.asarray(cfg.reference_mean, dtype=float)
            self.std = np.asarray(cfg.reference_std, dtype=float)

    def cross_entropy(self, theta):
        if self.kind == "uniform":
            return self.log_volume, np.zeros_like(theta)
        z = (theta - self.mean) / self.std
        per_row = 0.5 * np.sum(z * z, axis=1) + np.sum(np.log(self.std)) + 0.5 * theta.shape[1] * math.log(2 * math.pi)
        grad = z / self.std / theta.shape[0]
        return float(per_row.mean()), grad


class _Counter:
    def __init__(self):
        self.entropy_calls = 0


def loss_and_grad(
    sampler: SourceSampler,
    sim,
    data_batch,
    lam: float | None,
    reference: Reference,
    rng: RngStream,
    cfg: TrainConfig,
    *,
    latents=None,
    noise=None,
    directions=None,
    need_grad=True,
    counter: _Counter | None = None,
):
    """One evaluation of the penalty objective.

    ``lam=None`` selects the distance-only objective and never touches the
    entropy estimator. Returns the loss terms and, when ``need_grad``, the
    sampler parameter gradients of the total.
    """
    n = max(cfg.sim_batch, cfg.entropy_batch if lam is not None else 0)
    if latents is None:
        latents = rng.child("latent").standard_normal(n, sampler.latent_dim)
    theta = sampler.forward(latents)
    g_theta = np.zeros_like(theta)

    th_sim = theta[: cfg.sim_batch]
    if noise is None and not sim.deterministic:
        noise = sim.draw_noise(th_sim.shape[0], rng.child("noise"))
    x = sim.forward(th_sim, noise)
    if directions is None:
        directions = rng.child("directions").unit_directions(cfg.n_projections, x.shape[1])
    if not np.all(np.isfinite(x)):
        raise DivergenceError("simulator produced non-finite output")
    dist, cache = swd_forward(x, data_batch, directions=directions)
    sq = dist * dist
    distance_term = math.log(sq + cfg.eps_num)

    if lam is None:
        kl_term, w_dist, w_kl = 0.0, 1.0, 0.0
        total = distance_term
    else:
        th_ent = theta[: cfg.entropy_batch]
        h, kcache = _entropy.kole_forward(th_ent, cfg.k)
        if counter is not None:
            counter.entropy_calls += 1
        ce, g_ce = reference.cross_entropy(th_ent)
        kl_term = -h + ce
        w_dist, w_kl = 1.0 - lam, lam
        total = w_kl * kl_term + w_dist * distance_term
    if not math.isfinite(total):
        raise DivergenceError(f"non-finite loss {total}")
    terms = LossTerms(total, distance_term, kl_term)
    if not need_grad:
        return terms, None

    if w_dist:
        g_x = swd_backward(cache, squared=True) * (w_dist / (sq + cfg.eps_num))
        g_theta[: cfg.sim_batch] += sim.backward(th_sim, noise, g_x)
    if w_kl:
        g_theta[: cfg.entropy_batch] += w_kl * (g_ce - _entropy.kole_backward(th_ent, kcache))
    return terms, sampler.backward(g_theta)


def loss(sampler, sim, data_batch, lam, reference, rng, cfg, **kw) -> LossTerms:
    return loss_and_grad(sampler, sim, data_batch, lam, reference, rng, cfg, need_grad=False, **kw)[0]


@dataclass
class RunResult:
    sampler: SourceSampler
    config: TrainConfig
    trace: np.ndarray  # columns: iteration, lambda, total, distance, kl
    metrics: dict
    wall_clock: float
    task: str = ""
    best_iteration: int = -1
    entropy_calls: int = 0
    diverged: bool = False

    @property
    def seed(self) -> int:
        return self.config.seed

    def save(self, run_dir, snapshot: dict | None = None):
        """Write the run directory. ``snapshot`` adds top-level keys to config.toml."""
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        self.sampler.save(run_dir / "weights.srcw")
        (run_dir / "config.toml").write_text(config_snapshot(self.config, self.task, snapshot))
        (run_dir / "metrics.json").write_text(json.dumps(self.metrics_record(), indent=2) + "\n")
        (run_dir / "trace.csv").write_text(trace_csv(self.trace))

    def metrics_record(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "task": self.task,
            "lambda": "none" if self.config.lambda_final is None else self.config.lambda_final,
            "seed": self.config.seed,
            "stream": self.config.stream,
            "iterations": int(self.trace.shape[0]),
            "best_iteration": self.best_iteration,
            "entropy_evaluations": self.entropy_calls,
            "wall_clock_s": self.wall_clock,
            "diverged": self.diverged,
            **self.metrics,
        }

    @classmethod
    def load(cls, run_dir) -> "RunResult":
        run_dir = Path(run_dir)
        task, cfg = load_config_snapshot(run_dir / "config.toml")
        metrics = json.loads((run_dir / "metrics.json").read_text())
        if metrics.get("format_version") != FORMAT_VERSION:
            raise FormatVersionError(f"metrics version {metrics.get('format_version')}")
        trace = read_trace_csv(run_dir / "trace.csv")
        sampler = SourceSampler.load(run_dir / "weights.srcw")
        return cls(
            sampler,
            cfg,
            trace,
            {k: metrics[k] for k in ("entropy", "swd", "c2st", "swd_ratio") if k in metrics},
            metrics.get("wall_clock_s", 0.0),
            task=task,
            best_iteration=metrics.get("best_iteration", -1),
            entropy_calls=metrics.get("entropy_evaluations", 0),
            diverged=metrics.get("diverged", False),
        )


TRACE_COLUMNS = ("iteration", "lambda", "total", "distance", "kl")


def trace_csv(trace) -> str:
    buf = io.StringIO()
    buf.write(f"# format_version: {FORMAT_VERSION}\n")
    buf.write(",".join(TRACE_COLUMNS) + "\n")
    for row in trace:
        buf.write(f"{int(row[0])}," + ",".join(repr(float(v)) for v in row[1:]) + "\n")
    return buf.getvalue()


def read_trace_csv(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != f"# format_version: {FORMAT_VERSION}":
        raise FormatVersionError(f"{path}: unsupported trace format")
    rows = [list(map(float, line.split(","))) for line in lines[2:] if line]
    return np.array(rows).reshape(-1, len(TRACE_COLUMNS))


def config_snapshot(cfg: TrainConfig, task: str, extra: dict | None = None) -> str:
    doc = {"format_version": FORMAT_VERSION, "task": task}
    doc.update({k: v for k, v in (extra or {}).items() if k not in ("format_version", "task", "train")})
    doc["train"] = cfg.to_dict()
    return tomli_w.dumps(doc)


def load_config_snapshot(path) -> tuple[str, TrainConfig]:
    from ._toml import load_toml

    doc = load_toml(path)
    if doc.get("format_version") != FORMAT_VERSION:
        raise FormatVersionError(f"{path}: config version {doc.get('format_version')}")
    return doc["task"], TrainConfig.from_dict(doc.get("train", {}))


def train(sim, dataset, cfg: TrainConfig, eval_task=None, evaluate=True, sampler=None) -> RunResult:
    """Estimate a source for ``sim`` from ``dataset.train``.

    ``sim`` may be a simulator or a surrogate; metrics are computed with
    ``eval_task`` (defaults to ``sim``) against the dataset's held-out rows.
    Raises DivergenceError when the objective becomes non-finite.
    """
    start = time.perf_counter()
    data = dataset.train
    if data.shape[0] < cfg.sim_batch:
        raise ValueError(f"dataset has {data.shape[0]} training rows, need >= {cfg.sim_batch}")
    root = RngStream(cfg.seed, cfg.stream)
    if sampler is None:
        sampler = SourceSampler.create(sim.lo, sim.hi, hidden=cfg.hidden, rng=root.child("init"))
    sampler.train()
    opt = AdamState(sampler.params(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    reference = Reference(cfg, sampler.lo, sampler.hi)
    counter = _Counter()
    rows = []
    best, best_state, best_it, stale = math.inf, None, -1, 0
    it_rng = root.child("iterations")

    for it in range(cfg.max_iter):
        lam = None if cfg.lambda_final is None else lambda_schedule(it, cfg.decay_steps, cfg.lambda_final)
        step_rng = it_rng.child(it)
        batch = data[np.sort(step_rng.child("data").choice(data.shape[0], cfg.sim_batch))]
        terms, grads = loss_and_grad(sampler, sim, batch, lam, reference, step_rng, cfg, counter=counter)
        rows.append((it, 0.0 if lam is None else lam, terms.total, terms.distance, terms.kl))

        # the schedule phase never early-stops; losses are comparable only at fixed lambda
        if it >= cfg.decay_steps:
            if terms.total < best:
                best, best_it, stale = terms.total, it, 0
                best_state = sampler.net.state()
            else:
                stale += 1
            if stale >= cfg.patience:
                log.info("early stop at iteration %d (best %d)", it, best_it)
                break
        opt.step(sampler.params(), grads)

    if best_state is not None:
        sampler.net.load_state(best_state)
    sampler.eval()
    trace = np.array(rows, dtype=float).reshape(-1, len(TRACE_COLUMNS))
    metrics = {}
    if evaluate:
        metrics = evaluate_sampler(sampler, eval_task or sim, dataset, cfg.evaluation, cfg.seed)
    return RunResult(
        sampler,
        cfg,
        trace,
        metrics,
        time.perf_counter() - start,
        task=getattr(eval_task or sim, "name", ""),
        best_iteration=best_it,
        entropy_calls=counter.entropy_calls,
    )


# sweeps -------------------------------------------------------------------------

SWEEP_COLUMNS = ("lambda", "entropy", "swd", "c2st", "runtime_s", "diverged")


def _sweep_one(args):
    sim, dataset, cfg, eval_task, run_dir, snapshot = args
    t0 = time.perf_counter()
    lam = "none" if cfg.lambda_final is None else cfg.lambda_final
    try:
        run = train(sim, dataset, cfg, eval_task=eval_task)
    except (DivergenceError, ValueError, FloatingPointError) as exc:
        log.warning("run lambda=%s failed: %s", lam, exc)
        return {"lambda": lam, "entropy": math.nan, "swd": math.nan, "c2st": math.nan,
                "runtime_s": time.perf_counter() - t0, "diverged": True}
    if run_dir is not None:
        run.save(run_dir, snapshot)
    m = run.metrics
    return {"lambda": lam, "entropy": m["entropy"], "swd": m["swd"], "c2st": m["c2st"],
            "runtime_s": run.wall_clock, "diverged": False}


def sweep_configs(base: TrainConfig, grid=DEFAULT_GRID, include_none=True) -> list[TrainConfig]:
    """One config per grid value, each on its own random stream."""
    if len(grid) == 0 and not include_none:
        raise ValueError("empty lambda grid")
    lams = list(grid) + ([None] if include_none else [])
    return [replace(base, lambda_final=lam, stream=base.stream + i + 1) for i, lam in enumerate(lams)]


def sweep(sim, dataset, base: TrainConfig, grid=DEFAULT_GRID, include_none=True,
          out_dir=None, parallel=1, eval_task=None, snapshot=None) -> list[dict]:
    """Independent runs over a lambda grid plus the distance-only run.

    Failed runs are recorded with ``diverged=True``; the sweep continues.
    """
    cfgs = sweep_configs(base, grid, include_none)
    jobs = []
    for cfg in cfgs:
        run_dir = None
        if out_dir is not None:
            tag = "none" if cfg.lambda_final is None else f"{cfg.lambda_final:.6g}"
            run_dir = Path(out_dir) / f"run_lambda_{tag}"
        jobs.append((sim, dataset, cfg, eval_task, run_dir, snapshot))
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    if out_dir is not None:
        write_sweep_csv(Path(out_dir) / "sweep.csv", rows)
    return rows


def write_sweep_csv(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version: {FORMAT_VERSION}\n")
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# format_version: {FORMAT_VERSION}":
            raise FormatVersionError(f"{path}: unsupported sweep report format")
        rows = []
        for r in csv.DictReader(fh):
            rows.append({
                "lambda": r["lambda"] if r["lambda"] == "none" else float(r["lambda"]),
                "entropy": float(r["entropy"]),
                "swd": float(r["swd"]),
                "c2st": float(r["c2st"]),
                "runtime_s": float(r["runtime_s"]),
                "diverged": r["diverged"] == "True",
            })
    return rows
