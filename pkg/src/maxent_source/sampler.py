"""Neural source sampler: standard-normal latents pushed through an MLP.

The network's last layer is a sigmoid, rescaled onto the parameter box, so
every sample stays inside the box and a uniform reference on that box gives
a finite KL divergence.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatVersionError
from .numcore import DenseNet, RngStream, load_net, save_net

SIDECAR_VERSION = 1
OUT_INIT_SCALE = 0.3


class SourceSampler:
    def __init__(self, net: DenseNet, lo, hi, config: dict | None = None):
        self.net = net
        self.lo = np.asarray(lo, dtype=float).ravel()
        self.hi = np.asarray(hi, dtype=float).ravel()
        if self.lo.shape != self.hi.shape or np.any(self.lo >= self.hi):
            raise ValueError("box must satisfy lo < hi in every dimension")
        if net.n_out != self.lo.size:
            raise ValueError("network output width does not match the box dimension")
        if net.layers[-1].activation != "sigmoid":
            raise ValueError("last layer must be a sigmoid")
        self.config = dict(config or {})
        self._latents = None

    @classmethod
    def create(
        cls, lo, hi, hidden=(100, 100, 100), batch_norm=True, latent_dim=None, out_scale=OUT_INIT_SCALE, rng=None
    ):
        """Fresh sampler with latent dimension equal to the box dimension.

        ``out_scale`` shrinks the Glorot initialization of the last layer so an
        untrained sampler starts concentrated near the box center instead of
        already spreading over most of it.
        """
        lo = np.asarray(lo, dtype=float).ravel()
        m = lo.size
        latent_dim = m if latent_dim is None else latent_dim
        if rng is None:
            rng = RngStream(0)
        net = DenseNet.mlp(latent_dim, list(hidden), m, out_activation="sigmoid", batch_norm=batch_norm, rng=rng)
        net.layers[-1].weight *= out_scale
        config = {"hidden": list(hidden), "batch_norm": bool(batch_norm), "out_scale": out_scale}
        return cls(net, lo, hi, config)

    @property
    def latent_dim(self) -> int:
        return self.net.n_in

    @property
    def param_dim(self) -> int:
        return self.lo.size

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def log_box_volume(self) -> float:
        return float(np.sum(np.log(self.width)))

    def train(self):
        self.net.train()
        return self

    def eval(self):
        self.net.eval()
        return self

    def forward(self, latents, update_stats=True) -> np.ndarray:
        self._latents = np.asarray(latents, dtype=float)
        s = self.net.forward(self._latents, update_stats=update_stats)
        return self.lo + self.width * s

    def sample(self, n: int, rng: RngStream) -> np.ndarray:
        if self.net.training and n < 2:
            raise ValueError("train-mode sampling needs n >= 2 (batch norm)")
        return self.forward(rng.standard_normal(n, self.latent_dim))

    def backward(self, upstream) -> list[np.ndarray]:
        """Parameter gradients of ``sum(upstream * samples)``."""
        if self._latents is None:
            raise RuntimeError("backward called before a forward pass")
        _, grads = self.net.backward(np.asarray(upstream, dtype=float) * self.width)
        return grads

    def params(self):
        return self.net.params()

    # persistence ------------------------------------------------------------

    def save(self, path):
        """Write ``<path>`` (weights) and ``<path>.json`` (box and config)."""
        path = Path(path)
        save_net(self.net, path)
        sidecar = {
            "format_version": SIDECAR_VERSION,
            "kind": "source_sampler",
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "latent_dim": self.latent_dim,
            "param_dim": self.param_dim,
            "config": self.config,
        }
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def load(cls, path) -> "SourceSampler":
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        if meta.get("format_version") != SIDECAR_VERSION:
            raise FormatVersionError(f"sampler sidecar version {meta.get('format_version')}")
        net = load_net(path)
        return cls(net, meta["lo"], meta["hi"], meta.get("config"))
