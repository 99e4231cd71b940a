"""Common interface for differentiable simulators."""

from __future__ import annotations

import numpy as np

from ..numcore import RngStream


class SimTask:
    """A simulator with its parameter box and original source.

    Randomness is reparameterized: :meth:`draw_noise` returns every random
    input up front and :meth:`forward` is a deterministic function of
    ``(theta, noise)``, so :meth:`backward` never needs a likelihood.
    """

    name: str = ""
    theta_dim: int = 0
    x_dim: int = 0
    deterministic: bool = False

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r})"

    @property
    def log_box_volume(self) -> float:
        return float(np.sum(np.log(self.hi - self.lo)))

    def draw_noise(self, n: int, rng: RngStream | None):
        return None

    def forward(self, theta, noise) -> np.ndarray:
        raise NotImplementedError

    def backward(self, theta, noise, upstream) -> np.ndarray:
        """Vector-Jacobian product ``upstream^T dx/dtheta`` per row."""
        raise NotImplementedError

    def simulate(self, theta, rng: RngStream | None = None) -> np.ndarray:
        theta = self._check_theta(theta)
        noise = None if self.deterministic else self.draw_noise(theta.shape[0], rng)
        return self.forward(theta, noise)

    def original_source(self, n: int, rng: RngStream) -> np.ndarray:
        raise NotImplementedError

    def metadata(self) -> dict:
        return {
            "name": self.name,
            "theta_dim": self.theta_dim,
            "x_dim": self.x_dim,
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "deterministic": self.deterministic,
        }

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 1 and self.theta_dim == 1:
            theta = theta[:, None]
        if theta.ndim != 2 or theta.shape[1] != self.theta_dim:
            raise ValueError(f"{self.name}: theta must be (n, {self.theta_dim}), got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError(f"{self.name}: theta contains non-finite values")
        return theta


def rejection_fill(draw, n, lo, hi, max_rounds=1000):
    """Draw ``n`` rows from ``draw(k)`` keeping only rows inside ``[lo, hi]``."""
    out = []
    have = 0
    for _ in range(max_rounds):
        batch = draw(max(n - have, 16) + (n - have) // 10)
        keep = batch[np.all((batch >= lo) & (batch <= hi), axis=1)]
        out.append(keep)
        have += keep.shape[0]
        if have >= n:
            return np.concatenate(out)[:n]
    raise RuntimeError("rejection sampling did not fill the request")
