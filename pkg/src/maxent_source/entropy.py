"""Kozachenko-Leonenko nearest-neighbor entropy estimator.

    H ~= (d / m) * sum_{i: d_i > 0} log d_i - psi(k) + psi(n) + log V_d

with ``d_i`` the Euclidean distance from sample ``i`` to its k-th nearest
other sample, ``m`` the number of non-zero ``d_i`` and ``V_d`` the volume of
the d-dimensional unit ball.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleError
from .numcore.special import digamma, log_unit_ball_volume

log = logging.getLogger(__name__)

_ROW_CHUNK = 1024


@dataclass(frozen=True)
class KoleConfig:
    k: int = 3


@dataclass
class KoleCache:
    k: int
    neighbors: np.ndarray  # index of each row's k-th nearest other row
    distances: np.ndarray
    n_nonzero: int


def _as_samples(samples):
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"samples must be a 2-D array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")
    return x


def kth_neighbors(samples, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Index of and distance to each row's k-th nearest other row.

    Brute force over all pairs, in row chunks to bound memory. Neighbors are
    ranked with the expanded squared-distance form; the returned distances
    are recomputed directly from coordinate differences.
    """
    x = _as_samples(samples)
    n = x.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    sq = np.einsum("ij,ij->i", x, x)
    idx = np.empty(n, dtype=np.int64)
    for start in range(0, n, _ROW_CHUNK):
        stop = min(start + _ROW_CHUNK, n)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * (x[start:stop] @ x.T)
        rows = np.arange(stop - start)
        d2[rows, start + rows] = np.inf
        # exact ties under the expanded form are broken by true distance below
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        diff = x[start:stop, None, :] - x[part]
        exact = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        order = np.argsort(exact, axis=1, kind="stable")
        idx[start:stop] = np.take_along_axis(part, order[:, k - 1 : k], axis=1)[:, 0]
    dist = np.linalg.norm(x - x[idx], axis=1)
    return idx, dist


def knn_kth_distances(samples, k: int) -> np.ndarray:
    return kth_neighbors(samples, k)[1]


def kole_forward(samples, k: int = 3) -> tuple[float, KoleCache]:
    x = _as_samples(samples)
    n, d = x.shape
    idx, dist = kth_neighbors(x, k)
    nonzero = dist > 0
    m = int(nonzero.sum())
    if m == 0:
        raise DegenerateSampleError("all nearest-neighbor distances are zero")
    if m < n / 2:
        log.warning("degenerate sample: only %d of %d neighbor distances are non-zero", m, n)
    value = (d / m) * np.sum(np.log(dist[nonzero])) - digamma(k) + digamma(n) + log_unit_ball_volume(d)
    return float(value), KoleCache(k, idx, dist, m)


def kole_entropy(samples, k: int = 3) -> float:
    """Entropy estimate in nats."""
    return kole_forward(samples, k)[0]


def kole_backward(samples, cache: KoleCache) -> np.ndarray:
    """Gradient of the estimate with neighbor assignments held fixed."""
    x = _as_samples(samples)
    n, d = x.shape
    if cache.neighbors.shape != (n,):
        raise ValueError("cache does not belong to these samples")
    diff = x - x[cache.neighbors]
    dist = np.linalg.norm(diff, axis=1)
    used = cache.distances > 0
    if np.any(dist[used] == 0):
        raise DegenerateSampleError("zero distance on the gradient path")
    coef = np.zeros(n)
    coef[used] = (d / cache.n_nonzero) / dist[used] ** 2
    contrib = coef[:, None] * diff
    grad = contrib.copy()
    np.add.at(grad, cache.neighbors, -contrib)
    return grad
