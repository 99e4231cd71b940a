"""Deterministic MLP surrogates that stand in for a simulator.

A surrogate is trained by mean-squared-error regression on (theta, x) pairs
with theta uniform on the task box, and then exposes the same forward /
backward contract as the simulator it replaces.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import FormatVersionError
from .numcore import AdamState, DenseNet, RngStream, load_net, save_net
from .simulators import SimTask, get_task

log = logging.getLogger(__name__)

SIDECAR_VERSION = 1


class SurrogateRejected(ValueError):
    """Validation error exceeds the configured ceiling."""


@dataclass
class SurrogateSpec:
    hidden: tuple = (256, 256, 256)
    batch_norm: bool = False
    val_fraction: float = 0.2
    lr: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 512
    max_epochs: int = 300
    patience: int = 60
    # halve the learning rate after this many epochs without improvement
    lr_patience: int = 8
    min_lr: float = 1e-6
    # None: log-transform the inputs whenever the box is strictly positive
    log_inputs: bool | None = None
    rmse_ceiling: float | None = None

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        self.hidden = tuple(self.hidden)


class Standardizer:
    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=float)
        std = np.asarray(std, dtype=float)
        self.std = np.where(std > 0, std, 1.0)

    @classmethod
    def fit(cls, data):
        return cls(data.mean(axis=0), data.std(axis=0))

    def forward(self, x):
        return (x - self.mean) / self.std

    def inverse(self, z):
        return z * self.std + self.mean


class Surrogate(SimTask):
    deterministic = True

    def __init__(self, net: DenseNet, base: SimTask, theta_norm: Standardizer, x_norm: Standardizer,
                 report: dict | None = None, spec: SurrogateSpec | None = None):
        super().__init__(base.lo, base.hi)
        self.net = net.eval()
        self.base = base
        self.name = f"{base.name}_surrogate"
        self.theta_dim = base.theta_dim
        self.x_dim = base.x_dim
        self.theta_norm = theta_norm
        self.x_norm = x_norm
        self.report = report or {}
        self.spec = spec or SurrogateSpec()
        self.log_inputs = _use_log(self.spec, base)

    def _inputs(self, theta):
        return self.theta_norm.forward(np.log(theta) if self.log_inputs else theta)

    def _warn_outside(self, theta):
        if np.any(theta < self.lo) or np.any(theta > self.hi):
            log.warning("%s: evaluating outside the training box (extrapolation)", self.name)

    def forward(self, theta, noise=None):
        theta = self._check_theta(theta)
        self._warn_outside(theta)
        self.net.eval()
        return self.x_norm.inverse(self.net.forward(self._inputs(theta)))

    def backward(self, theta, noise, upstream):
        theta = self._check_theta(theta)
        self.net.eval()
        self.net.forward(self._inputs(theta))
        g_in, _ = self.net.backward(np.asarray(upstream, dtype=float) * self.x_norm.std)
        g_in = g_in / self.theta_norm.std
        return g_in / theta if self.log_inputs else g_in

    def original_source(self, n, rng):
        return self.base.original_source(n, rng)

    def metadata(self):
        return {**super().metadata(), "base": self.base.name}

    def save(self, path):
        path = Path(path)
        save_net(self.net, path)
        sidecar = {
            "format_version": SIDECAR_VERSION,
            "kind": "surrogate",
            "task": self.base.name,
            "task_options": _task_options(self.base),
            "theta_mean": self.theta_norm.mean.tolist(),
            "theta_std": self.theta_norm.std.tolist(),
            "x_mean": self.x_norm.mean.tolist(),
            "x_std": self.x_norm.std.tolist(),
            "spec": {**asdict(self.spec), "hidden": list(self.spec.hidden)},
            "validation": self.report,
        }
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")

    @classmethod
    def load(cls, path, base: SimTask | None = None) -> "Surrogate":
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        if meta.get("format_version") != SIDECAR_VERSION:
            raise FormatVersionError(f"surrogate sidecar version {meta.get('format_version')}")
        if base is None:
            base = get_task(meta["task"], **meta.get("task_options", {}))
        return cls(
            load_net(path),
            base,
            Standardizer(meta["theta_mean"], meta["theta_std"]),
            Standardizer(meta["x_mean"], meta["x_std"]),
            meta.get("validation"),
            SurrogateSpec(**meta["spec"]),
        )


def _use_log(spec, task):
    if spec.log_inputs is None:
        return bool(np.all(task.lo > 0))
    if spec.log_inputs and not np.all(task.lo > 0):
        raise ValueError("log_inputs needs a strictly positive parameter box")
    return bool(spec.log_inputs)


def _task_options(task):
    return {k: getattr(task, k) for k in ("horizon", "dt", "n_obs") if hasattr(task, k)}


def _mse_rows(net, x, y, batch=4096):
    out = np.empty_like(y)
    for start in range(0, x.shape[0], batch):
        out[start : start + batch] = net.forward(x[start : start + batch])
    return np.mean((out - y) ** 2, axis=0)


def train_surrogate(task: SimTask, n_pairs: int, spec: SurrogateSpec | None = None,
                    rng: RngStream | None = None) -> tuple[Surrogate, dict]:
    """Fit a surrogate on ``n_pairs`` uniform-box simulations.

    Returns the surrogate (best validation weights) and a report with the
    per-dimension validation RMSE in standardized output units.
    """
    spec = spec or SurrogateSpec()
    rng = rng or RngStream(0)
    if not task.deterministic:
        log.warning("%s is stochastic; the surrogate models its noise-free mean response only", task.name)
    theta = rng.child("theta").uniform_box(n_pairs, task.lo, task.hi)
    x = task.simulate(theta, rng.child("noise"))
    n_val = int(round(spec.val_fraction * n_pairs))
    if n_val < 1 or n_pairs - n_val < 2:
        raise ValueError("too few pairs for the validation split")
    perm = rng.child("split").permutation(n_pairs)
    val, tr = perm[:n_val], perm[n_val:]
    inputs = np.log(theta) if _use_log(spec, task) else theta
    theta_norm = Standardizer.fit(inputs[tr])
    x_norm = Standardizer.fit(x[tr])
    zt, zx = theta_norm.forward(inputs), x_norm.forward(x)

    net = DenseNet.mlp(task.theta_dim, list(spec.hidden), task.x_dim, batch_norm=spec.batch_norm,
                       rng=rng.child("init"))
    opt = AdamState(net.params(), lr=spec.lr, weight_decay=spec.weight_decay)
    best, best_state, best_epoch = np.inf, net.state(), -1
    # the lr schedule and early stop watch a smoothed validation curve so a
    # single lucky epoch does not trigger a run of halvings
    smooth, best_smooth, stale, flat = None, np.inf, 0, 0
    batches = rng.child("batches")
    history = []
    bs = min(spec.batch_size, tr.size)
    for epoch in range(spec.max_epochs):
        net.train()
        order = tr[batches.permutation(tr.size)]
        for start in range(0, order.size - bs + 1, bs):
            b = order[start : start + bs]
            out = net.forward(zt[b])
            grad = 2.0 * (out - zx[b]) / out.size
            _, grads = net.backward(grad)
            opt.step(net.params(), grads)
        net.eval()
        val_loss = float(np.mean(_mse_rows(net, zt[val], zx[val])))
        history.append(val_loss)
        if val_loss < best:
            best, best_state, best_epoch = val_loss, net.state(), epoch
        smooth = val_loss if smooth is None else 0.7 * smooth + 0.3 * val_loss
        if smooth < best_smooth:
            best_smooth, stale, flat = smooth, 0, 0
        else:
            stale += 1
            flat += 1
            if stale >= spec.patience:
                break
            if flat >= spec.lr_patience:
                opt.lr, flat = max(opt.lr * 0.5, spec.min_lr), 0
    net.load_state(best_state)
    net.eval()
    per_dim = np.sqrt(_mse_rows(net, zt[val], zx[val]))
    report = {
        "n_pairs": n_pairs,
        "n_validation": int(n_val),
        "epochs": len(history),
        "final_lr": float(opt.lr),
        "best_epoch": best_epoch,
        "val_rmse": float(np.sqrt(np.mean(per_dim**2))),
        "val_rmse_per_dim": per_dim.tolist(),
    }
    if spec.rmse_ceiling is not None and report["val_rmse"] > spec.rmse_ceiling:
        raise SurrogateRejected(f"validation RMSE {report['val_rmse']:.4g} exceeds {spec.rmse_ceiling}")
    return Surrogate(net, task, theta_norm, x_norm, report, spec), report
