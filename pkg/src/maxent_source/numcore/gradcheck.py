"""Central finite differences, used as the gradient oracle in tests."""

import numpy as np

from ..errors import DivergenceError


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    x = np.array(x, dtype=float)
    if h <= 0:
        raise ValueError("step must be positive")
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DivergenceError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def max_rel_error(a, b, floor=1e-8):
    """Largest entrywise ``|a - b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale)) if a.size else 0.0
