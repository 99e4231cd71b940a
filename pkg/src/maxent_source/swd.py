"""Sliced-Wasserstein distance between two equally sized sample sets.

One-dimensional distances pair order statistics and are normalized by the
sample count, ``W_m = ((1/n) sum_i |a_(i) - b_(i)|^m)^(1/m)``, so values do
not grow with batch size. For order 2 the sliced distance is
``sqrt(mean_u W_2(u)^2)``; for order 1 it is ``mean_u W_1(u)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore.rng import RngStream

_DIRECTION_CHUNK = 512


@dataclass
class SwdConfig:
    order: int = 2
    n_projections: int = 64

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        if self.n_projections < 1:
            raise ValueError("need at least one projection")


@dataclass
class SwdCache:
    directions: np.ndarray  # (P, d)
    order: int
    perm: np.ndarray  # (n, P) argsort of projected X
    diff: np.ndarray  # (n, P) sorted-X minus sorted-Y projections
    rows: np.ndarray | None  # subsampled X rows, if any
    n_x: int
    value: float


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite values cannot be ordered")


def wasserstein_1d(a, b, order: int = 2) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("empty input")
    _check_finite(a, b)
    diff = np.abs(np.sort(a, kind="stable") - np.sort(b, kind="stable"))
    if order == 1:
        return float(diff.mean())
    if order == 2:
        return float(np.sqrt(np.mean(diff * diff)))
    return float(np.mean(diff**order) ** (1.0 / order))


def _match_rows(X, Y, rng):
    """Subsample the larger set without replacement to equal row counts."""
    rows = None
    if X.shape[0] != Y.shape[0]:
        if rng is None:
            raise ValueError("row counts differ; an rng is needed to subsample")
        if X.shape[0] > Y.shape[0]:
            rows = np.sort(rng.choice(X.shape[0], Y.shape[0]))
            X = X[rows]
        else:
            Y = Y[np.sort(rng.choice(Y.shape[0], X.shape[0]))]
    return X, Y, rows


def _prepare(X, Y, directions, n_projections, rng):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    _check_finite(X, Y)
    if directions is None:
        if rng is None:
            raise ValueError("either directions or an rng is required")
        directions = rng.unit_directions(n_projections, X.shape[1])
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    if directions.shape[1] != X.shape[1]:
        raise ValueError("directions do not match the sample dimension")
    return X, Y, directions


def _reduce(sq_or_abs_mean, order):
    if order == 2:
        return float(np.sqrt(sq_or_abs_mean))
    return float(sq_or_abs_mean)


def swd(
    X,
    Y,
    order: int = 2,
    n_projections: int = 64,
    rng: RngStream | None = None,
    directions=None,
) -> float:
    """Monte Carlo sliced distance; memory-bounded, no gradient state kept."""
    X, Y, directions = _prepare(X, Y, directions, n_projections, rng)
    X, Y, _ = _match_rows(X, Y, rng)
    total = 0.0
    for start in range(0, directions.shape[0], _DIRECTION_CHUNK):
        u = directions[start : start + _DIRECTION_CHUNK]
        diff = np.sort(X @ u.T, axis=0) - np.sort(Y @ u.T, axis=0)
        total += np.sum(diff * diff) if order == 2 else np.sum(np.abs(diff))
    return _reduce(total / (X.shape[0] * directions.shape[0]), order)


def swd_forward(X, Y, order=2, n_projections=64, rng=None, directions=None) -> tuple[float, SwdCache]:
    """Sliced distance plus the sort permutations needed for the gradient."""
    n_x = np.shape(X)[0]
    X, Y, directions = _prepare(X, Y, directions, n_projections, rng)
    X, Y, rows = _match_rows(X, Y, rng)
    px = X @ directions.T
    perm = np.argsort(px, axis=0, kind="stable")
    diff = np.take_along_axis(px, perm, axis=0) - np.sort(Y @ directions.T, axis=0, kind="stable")
    if order == 2:
        value = _reduce(np.mean(diff * diff), 2)
    else:
        value = _reduce(np.mean(np.abs(diff)), 1)
    return value, SwdCache(directions, order, perm, diff, rows, n_x, value)


def swd_backward(cache: SwdCache, squared: bool = False) -> np.ndarray:
    """Gradient w.r.t. X with directions and order-statistic matchings frozen.

    With ``squared`` set (order 2 only) the gradient of the squared distance
    is returned, which stays well defined at zero distance.
    """
    if cache is None:
        raise RuntimeError("swd_backward needs the cache from swd_forward")
    n, p = cache.diff.shape
    if cache.order == 2:
        g_sorted = (2.0 / (n * p)) * cache.diff
        if not squared:
            if cache.value == 0.0:
                g_sorted = np.zeros_like(g_sorted)
            else:
                g_sorted = g_sorted / (2.0 * cache.value)
    else:
        if squared:
            raise ValueError("squared gradient is defined for order 2 only")
        g_sorted = np.sign(cache.diff) / (n * p)
    g_proj = np.empty_like(g_sorted)
    np.put_along_axis(g_proj, cache.perm, g_sorted, axis=0)
    grad = g_proj @ cache.directions
    if cache.rows is not None:
        full = np.zeros((cache.n_x, grad.shape[1]))
        full[cache.rows] = grad
        grad = full
    return grad
