"""Quality metrics for learned sources.

Classifier two-sample test, the ground-truth sliced-distance floor, entropy
and per-time-point percentile tables.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .entropy import kole_entropy
from .numcore import AdamState, DenseNet, RngStream
from .swd import swd

DEFAULT_PERCENTILES = (5, 25, 50, 75, 95)


@dataclass
class C2stConfig:
    hidden: tuple = (100, 100)
    folds: int = 5
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 128
    patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0


@dataclass
class EvalConfig:
    n_entropy: int = 4096
    n_projections: int = 4096
    baseline_repeats: int = 5
    k: int = 3
    c2st: C2stConfig = field(default_factory=C2stConfig)

    def to_dict(self):
        d = asdict(self)
        d["c2st"]["hidden"] = list(self.c2st.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        c = dict(d.pop("c2st", {}) or {})
        if "hidden" in c:
            c["hidden"] = tuple(c["hidden"])
        return cls(**d, c2st=C2stConfig(**c))


# classifier two-sample test --------------------------------------------------


def _bce_and_grad(logits, y):
    loss = np.mean(np.logaddexp(0.0, logits) - y * logits)
    grad = (0.5 * (1.0 + np.tanh(0.5 * logits)) - y) / logits.shape[0]
    return loss, grad


def _fit_classifier(x, y, cfg: C2stConfig, rng: RngStream) -> DenseNet:
    n_val = max(1, int(round(cfg.val_fraction * x.shape[0])))
    perm = rng.permutation(x.shape[0])
    val, tr = perm[:n_val], perm[n_val:]
    net = DenseNet.mlp(x.shape[1], list(cfg.hidden), 1, batch_norm=False, rng=rng)
    opt = AdamState(net.params(), lr=cfg.lr)
    best, best_state, stale = np.inf, net.state(), 0
    for _ in range(cfg.epochs):
        order = tr[rng.permutation(tr.size)]
        for start in range(0, order.size, cfg.batch_size):
            b = order[start : start + cfg.batch_size]
            out = net.forward(x[b])
            _, g = _bce_and_grad(out, y[b])
            _, grads = net.backward(g)
            opt.step(net.params(), grads)
        val_loss, _ = _bce_and_grad(net.forward(x[val]), y[val])
        if val_loss < best - 1e-6:
            best, best_state, stale = val_loss, net.state(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    net.load_state(best_state)
    return net


def c2st(X, Y, cfg: C2stConfig | None = None, rng: RngStream | None = None) -> float:
    """Mean held-out accuracy of a classifier separating ``X`` from ``Y``.

    0.5 means the two sets are indistinguishable to the classifier.
    """
    cfg = cfg or C2stConfig()
    rng = rng or RngStream(cfg.seed)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ValueError("dimension mismatch")
    if cfg.folds < 2:
        raise ValueError("need at least 2 folds")
    n = min(X.shape[0], Y.shape[0])
    sub = rng.child("subsample")
    if X.shape[0] > n:
        X = X[np.sort(sub.choice(X.shape[0], n))]
    if Y.shape[0] > n:
        Y = Y[np.sort(sub.choice(Y.shape[0], n))]
    if n < 2 * cfg.folds:
        raise ValueError(f"{n} rows per class is too few for {cfg.folds} folds")
    data = np.concatenate([X, Y])
    std = data.std(axis=0)
    data = (data - data.mean(axis=0)) / np.where(std > 0, std, 1.0)
    labels = np.concatenate([np.zeros(n), np.ones(n)])[:, None]

    split = rng.child("folds")
    fold_of = np.empty(2 * n, dtype=np.int64)
    for offset in (0, n):
        fold_of[offset + split.permutation(n)] = np.arange(n) % cfg.folds

    accs = []
    for f in range(cfg.folds):
        test = fold_of == f
        net = _fit_classifier(data[~test], labels[~test], cfg, rng.child(f"fold{f}"))
        pred = net.eval().forward(data[test]) > 0
        accs.append(float(np.mean(pred == (labels[test] > 0.5))))
    return float(np.mean(accs))


# distance floor ---------------------------------------------------------------


def ground_truth_swd_baseline(task, n, repeats, rng: RngStream, n_projections=4096, directions=None):
    """Mean and std of the sliced distance between two independent simulation sets."""
    vals = []
    for r in range(repeats):
        rr = rng.child(f"baseline{r}")
        a = task.simulate(task.original_source(n, rr.child("a")), rr.child("a-noise"))
        b = task.simulate(task.original_source(n, rr.child("b")), rr.child("b-noise"))
        vals.append(swd(a, b, n_projections=n_projections, rng=rr.child("dirs"), directions=directions))
    return float(np.mean(vals)), float(np.std(vals))


# percentiles --------------------------------------------------------------------


def percentile_curves(series, percentiles=DEFAULT_PERCENTILES) -> np.ndarray:
    """Per-time-point percentiles, shape ``(T, len(percentiles))``."""
    series = np.atleast_2d(np.asarray(series, dtype=float))
    if series.shape[0] == 0:
        raise ValueError("empty batch")
    return np.percentile(series, percentiles, axis=0).T


def write_percentile_csv(path, times, table, percentiles=DEFAULT_PERCENTILES):
    with open(path, "w", newline="") as fh:
        fh.write("# format_version: 1\n")
        w = csv.writer(fh)
        w.writerow(["t", *[f"p{p}" for p in percentiles]])
        for t, row in zip(times, table):
            w.writerow([repr(float(t)), *[repr(float(v)) for v in row]])


def band_agreement(obs_table, sim_table, rel=0.1) -> np.ndarray:
    """Per time point: do all simulated percentiles lie within the observed band?

    Each percentile curve gets a band of half-width ``rel`` times its peak
    magnitude over time. A pointwise relative band would judge the near-zero
    tails of epidemic-style curves on quantile noise alone.
    """
    obs = np.asarray(obs_table, dtype=float)
    sim = np.asarray(sim_table, dtype=float)
    tol = rel * np.abs(obs).max(axis=0, keepdims=True)
    return np.all(np.abs(sim - obs) <= tol, axis=1)


def series_blocks(task) -> list[tuple[str, slice]]:
    """Name and column slice of each observed time series of a task.

    Empty for tasks without a ``times`` axis.
    """
    times = getattr(task, "times", None)
    if times is None:
        return []
    t = len(times)
    names = {"sir": ["infected"], "lotka_volterra": ["prey", "predator"]}.get(
        task.name, [f"series{i}" for i in range(task.x_dim // t)]
    )
    return [(name, slice(i * t, (i + 1) * t)) for i, name in enumerate(names)]


def time_series_percentiles(sampler, task, dataset, seed=0, percentiles=DEFAULT_PERCENTILES) -> dict:
    """Observed and simulated percentile tables per series.

    Uses every observation and as many simulations, since percentile noise
    at the holdout size alone is comparable to a 10% band.
    """
    rng = RngStream(seed).child("percentiles")
    obs = dataset.data
    sampler.eval()
    theta = sampler.forward(rng.child("latent").standard_normal(obs.shape[0], sampler.latent_dim))
    sims = task.simulate(theta, rng.child("noise"))
    out = {}
    for name, cols in series_blocks(task):
        out[name] = (percentile_curves(obs[:, cols], percentiles), percentile_curves(sims[:, cols], percentiles))
    return out


# full record --------------------------------------------------------------------


def evaluate_sampler(sampler, task, dataset, cfg: EvalConfig | None = None, seed: int = 0) -> dict:
    """Metrics for an eval-mode sampler against the dataset's held-out rows.

    Depends only on ``seed``, so every run in a sweep shares projection
    directions and classifier initializations.
    """
    cfg = cfg or EvalConfig()
    rng = RngStream(seed).child("metrics")
    holdout = dataset.holdout
    n_h = holdout.shape[0]
    was_training = sampler.net.training
    sampler.eval()
    try:
        n = max(cfg.n_entropy, n_h)
        theta = sampler.forward(rng.child("latent").standard_normal(n, sampler.latent_dim))
    finally:
        if was_training:
            sampler.train()
    entropy = kole_entropy(theta[: cfg.n_entropy], cfg.k)
    sims = task.simulate(theta[:n_h], rng.child("sim-noise"))
    directions = rng.child("directions").unit_directions(cfg.n_projections, holdout.shape[1])
    dist = swd(sims, holdout, directions=directions)
    base_mean, base_std = ground_truth_swd_baseline(
        task, n_h, cfg.baseline_repeats, rng.child("baseline"), directions=directions
    )
    acc = c2st(sims, holdout, cfg.c2st, rng.child("c2st"))
    record = {
        "entropy": entropy,
        "swd": dist,
        "c2st": acc,
        "baseline_swd_mean": base_mean,
        "baseline_swd_std": base_std,
        "swd_ratio": dist / base_mean if base_mean > 0 else math.inf,
        "n_holdout": n_h,
    }
    return record


def evaluate_run(run, task, dataset, cfg: EvalConfig | None = None, seed: int | None = None) -> dict:
    if dataset.data.shape[1] != task.x_dim:
        raise ValueError(f"dataset has {dataset.data.shape[1]} columns, task expects {task.x_dim}")
    seed = run.config.seed if seed is None else seed
    return evaluate_sampler(run.sampler, task, dataset, cfg, seed)
