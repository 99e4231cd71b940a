"""Special functions needed by the nearest-neighbor entropy estimator."""

import math

# Bernoulli-number coefficients of the digamma asymptotic series:
# psi(x) ~ ln x - 1/(2x) - sum_k B_2k / (2k x^2k)
_ASYMPTOTIC = (
    1.0 / 12,
    -1.0 / 120,
    1.0 / 252,
    -1.0 / 240,
    1.0 / 132,
    -691.0 / 32760,
    1.0 / 12,
)


def digamma(x: float) -> float:
    """Digamma function for positive arguments.

    Shifts the argument up to ``x >= 6`` with the recurrence
    ``psi(x) = psi(x + 1) - 1/x`` and evaluates the asymptotic series there.
    Absolute error is below 1e-12 on the whole positive axis.
    """
    x = float(x)
    if not x > 0 or math.isinf(x):
        raise ValueError(f"digamma is defined here only for finite x > 0, got {x}")
    acc = 0.0
    while x < 6.0:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    power = inv2
    for c in _ASYMPTOTIC:
        series += c * power
        power *= inv2
    return acc + math.log(x) - 0.5 / x - series


def log_unit_ball_volume(d: int) -> float:
    """Log-volume of the Euclidean unit ball in ``d`` dimensions."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    return 0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d + 1.0)


def unit_ball_volume(d: int) -> float:
    return math.exp(log_unit_ball_volume(d))
