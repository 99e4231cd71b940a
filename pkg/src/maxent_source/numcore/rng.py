"""Counter-based, splittable random streams.

Each stream is a Philox generator keyed by ``(seed, stream_id)``, so two
streams with different ids never share state and any stream can be rebuilt
from its two integers alone.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _mix(stream: int, tag: str | int) -> int:
    h = hashlib.blake2b(f"{stream}:{tag}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


class RngStream:
    """Reproducible random stream identified by a seed and a stream id."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = self.seed | (self.stream << 64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"

    def child(self, tag: str | int) -> "RngStream":
        """Independent stream derived from this one and ``tag``.

        The child depends only on ``(seed, stream, tag)``, never on how many
        draws the parent has made.
        """
        return RngStream(self.seed, _mix(self.stream, tag))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def standard_normal(self, n: int, d: int) -> np.ndarray:
        _check_shape(n, d)
        return self._gen.standard_normal((n, d))

    def uniform(self, n: int, d: int) -> np.ndarray:
        _check_shape(n, d)
        return self._gen.random((n, d))

    def uniform_box(self, n: int, lo, hi) -> np.ndarray:
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("box bounds differ in shape")
        if np.any(lo >= hi):
            raise ValueError(f"degenerate box: lo={lo}, hi={hi}")
        return lo + (hi - lo) * self.uniform(n, lo.size)

    def unit_directions(self, n: int, d: int) -> np.ndarray:
        """Uniform draws on the unit sphere S^{d-1} (normalized Gaussians)."""
        g = self.standard_normal(n, d)
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        # a zero Gaussian draw has probability zero; redraw defensively
        while np.any(norms == 0):
            bad = norms[:, 0] == 0
            g[bad] = self._gen.standard_normal((int(bad.sum()), d))
            norms = np.linalg.norm(g, axis=1, keepdims=True)
        return g / norms

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int) -> np.ndarray:
        """``size`` distinct indices from ``range(n)``."""
        if size > n:
            raise ValueError(f"cannot draw {size} distinct items from {n}")
        return self._gen.choice(n, size=size, replace=False)


def _check_shape(n, d):
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
