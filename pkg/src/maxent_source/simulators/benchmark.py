"""Closed-form benchmark simulators: two moons, inverse kinematics, SLCP, |theta|."""

from __future__ import annotations

import numpy as np

from .base import SimTask, rejection_fill

SQRT2 = np.sqrt(2.0)


class TwoMoons(SimTask):
    name = "two_moons"
    theta_dim = 2
    x_dim = 2

    def __init__(self):
        super().__init__([-5.0, -5.0], [5.0, 5.0])

    def draw_noise(self, n, rng):
        alpha = -np.pi / 2 + np.pi * rng.uniform(n, 1)[:, 0]
        r = 0.1 + 0.01 * rng.standard_normal(n, 1)[:, 0]
        return np.stack([alpha, r], axis=1)

    def forward(self, theta, noise):
        theta = self._check_theta(theta)
        alpha, r = noise[:, 0], noise[:, 1]
        t1, t2 = theta[:, 0], theta[:, 1]
        x1 = r * np.cos(alpha) + 0.25 - np.abs(t1 + t2) / SQRT2
        x2 = r * np.sin(alpha) + (t2 - t1) / SQRT2
        return np.stack([x1, x2], axis=1)

    def backward(self, theta, noise, upstream):
        theta = self._check_theta(theta)
        g1, g2 = upstream[:, 0], upstream[:, 1]
        sgn = np.sign(theta[:, 0] + theta[:, 1])
        d1 = -sgn / SQRT2 * g1 - g2 / SQRT2
        d2 = -sgn / SQRT2 * g1 + g2 / SQRT2
        return np.stack([d1, d2], axis=1)

    def original_source(self, n, rng):
        return rng.uniform_box(n, [-1.0, -1.0], [1.0, 1.0])


class InverseKinematics(SimTask):
    name = "ik"
    theta_dim = 4
    x_dim = 2
    lengths = (0.5, 0.5, 1.0)
    noise_std = 0.00017
    # covariance diagonal of the original source (variances)
    source_var = (0.5, 0.25, 0.25, 0.25)

    def __init__(self):
        super().__init__([-np.pi] * 4, [np.pi] * 4)

    def draw_noise(self, n, rng):
        return self.noise_std * rng.standard_normal(n, 1)

    def _angles(self, theta, noise):
        eps = noise[:, 0]
        a1 = theta[:, 1] + eps
        a2 = a1 + theta[:, 2]
        a3 = a2 + theta[:, 3]
        return a1, a2, a3

    def forward(self, theta, noise):
        theta = self._check_theta(theta)
        l1, l2, l3 = self.lengths
        a1, a2, a3 = self._angles(theta, noise)
        x1 = theta[:, 0] + l1 * np.sin(a1) + l2 * np.sin(a2) + l3 * np.sin(a3)
        x2 = l1 * np.cos(a1) + l2 * np.cos(a2) + l3 * np.cos(a3)
        return np.stack([x1, x2], axis=1)

    def backward(self, theta, noise, upstream):
        theta = self._check_theta(theta)
        l1, l2, l3 = self.lengths
        a1, a2, a3 = self._angles(theta, noise)
        g1, g2 = upstream[:, 0], upstream[:, 1]
        # sensitivity of x to each cumulative angle
        c = [l * (g1 * np.cos(a) - g2 * np.sin(a)) for l, a in zip(self.lengths, (a1, a2, a3))]
        return np.stack([g1, c[0] + c[1] + c[2], c[1] + c[2], c[2]], axis=1)

    def original_source(self, n, rng):
        std = np.sqrt(self.source_var)
        return rejection_fill(lambda k: std * rng.standard_normal(k, 4), n, self.lo, self.hi)

    @classmethod
    def source_entropy(cls) -> float:
        return 0.5 * len(cls.source_var) * np.log(2 * np.pi * np.e) + 0.5 * float(np.sum(np.log(cls.source_var)))


class SLCP(SimTask):
    name = "slcp"
    theta_dim = 5
    x_dim = 8
    n_draws = 4

    def __init__(self):
        super().__init__([-5.0] * 5, [5.0] * 5)

    def draw_noise(self, n, rng):
        return rng.standard_normal(n, 2 * self.n_draws).reshape(n, self.n_draws, 2)

    @staticmethod
    def scale_tril(theta):
        """Lower-triangular factor A with A A^T equal to the draw covariance."""
        s1 = theta[:, 2] ** 2
        s2 = theta[:, 3] ** 2
        rho = np.tanh(theta[:, 4])
        a = np.zeros((theta.shape[0], 2, 2))
        a[:, 0, 0] = s1
        a[:, 1, 0] = rho * s2
        a[:, 1, 1] = s2 / np.cosh(theta[:, 4])  # s2 * sqrt(1 - rho^2)
        return a

    def forward(self, theta, noise):
        theta = self._check_theta(theta)
        z1, z2 = noise[..., 0], noise[..., 1]
        s1 = (theta[:, 2] ** 2)[:, None]
        s2 = (theta[:, 3] ** 2)[:, None]
        rho = np.tanh(theta[:, 4])[:, None]
        sech = 1.0 / np.cosh(theta[:, 4])[:, None]
        x1 = theta[:, :1] + s1 * z1
        x2 = theta[:, 1:2] + s2 * (rho * z1 + sech * z2)
        return np.stack([x1, x2], axis=2).reshape(theta.shape[0], self.x_dim)

    def backward(self, theta, noise, upstream):
        theta = self._check_theta(theta)
        g = np.asarray(upstream).reshape(theta.shape[0], self.n_draws, 2)
        g1, g2 = g[..., 0], g[..., 1]
        z1, z2 = noise[..., 0], noise[..., 1]
        t3, t4, t5 = theta[:, 2:3], theta[:, 3:4], theta[:, 4:5]
        rho = np.tanh(t5)
        sech = 1.0 / np.cosh(t5)
        out = np.empty_like(theta)
        out[:, 0] = g1.sum(axis=1)
        out[:, 1] = g2.sum(axis=1)
        out[:, 2] = np.sum(g1 * 2 * t3 * z1, axis=1)
        out[:, 3] = np.sum(g2 * 2 * t4 * (rho * z1 + sech * z2), axis=1)
        out[:, 4] = np.sum(g2 * t4**2 * (sech**2 * z1 - sech * rho * z2), axis=1)
        return out

    def original_source(self, n, rng):
        return rng.uniform_box(n, [-3.0] * 5, [3.0] * 5)


class AbsVal(SimTask):
    """Deterministic ``x = |theta|``; every mixture of the two signs is a valid source."""

    name = "absval"
    theta_dim = 1
    x_dim = 1
    deterministic = True

    def __init__(self):
        super().__init__([-1.0], [1.0])

    def forward(self, theta, noise=None):
        return np.abs(self._check_theta(theta))

    def backward(self, theta, noise, upstream):
        return np.sign(self._check_theta(theta)) * upstream

    def original_source(self, n, rng):
        return rng.uniform_box(n, [-1.0], [1.0])
