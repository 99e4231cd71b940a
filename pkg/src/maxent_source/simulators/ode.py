"""SIR and Lotka-Volterra simulators integrated with fixed-step RK4.

Gradients are the exact discrete adjoint of the RK4 recursion: the forward
pass stores the state after every step and the backward pass replays each
step's stages in reverse.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..errors import DivergenceError
from .base import SimTask, rejection_fill


@njit(cache=True)
def _sir_f(s, i, beta, gamma):
    inf = beta * s * i
    return -inf, inf - gamma * i


@njit(cache=True)
def _sir_vjp(s, i, beta, gamma, vs, vi):
    """(J_y^T v, J_theta^T v) of the SIR right-hand side."""
    ds = -beta * i * vs + beta * i * vi
    di = -beta * s * vs + (beta * s - gamma) * vi
    dbeta = -s * i * vs + s * i * vi
    dgamma = -i * vi
    return ds, di, dbeta, dgamma


@njit(cache=True)
def _sir_integrate(theta, dt, steps_per_obs, n_obs, traj):
    """Fill ``traj[k] = (s, i, r)`` after ``k`` steps for one parameter row."""
    beta, gamma = theta[0], theta[1]
    n_steps = steps_per_obs * n_obs
    for k in range(n_steps):
        s, i, r = traj[k, 0], traj[k, 1], traj[k, 2]
        k1s, k1i = _sir_f(s, i, beta, gamma)
        k2s, k2i = _sir_f(s + 0.5 * dt * k1s, i + 0.5 * dt * k1i, beta, gamma)
        k3s, k3i = _sir_f(s + 0.5 * dt * k2s, i + 0.5 * dt * k2i, beta, gamma)
        k4s, k4i = _sir_f(s + dt * k3s, i + dt * k3i, beta, gamma)
        ds = dt / 6.0 * (k1s + 2 * k2s + 2 * k3s + k4s)
        di = dt / 6.0 * (k1i + 2 * k2i + 2 * k3i + k4i)
        traj[k + 1, 0] = s + ds
        traj[k + 1, 1] = i + di
        traj[k + 1, 2] = r - ds - di
        if not (np.isfinite(traj[k + 1, 0]) and np.isfinite(traj[k + 1, 1])):
            return False
    return True


@njit(cache=True)
def sir_forward(theta, i0, dt, steps_per_obs, n_obs):
    n = theta.shape[0]
    out = np.empty((n, n_obs))
    traj = np.empty((steps_per_obs * n_obs + 1, 3))
    ok = True
    for row in range(n):
        traj[0, 0] = 1.0 - i0
        traj[0, 1] = i0
        traj[0, 2] = 0.0
        if not _sir_integrate(theta[row], dt, steps_per_obs, n_obs, traj):
            ok = False
        for j in range(n_obs):
            out[row, j] = traj[(j + 1) * steps_per_obs, 1]
    return out, ok


@njit(cache=True)
def sir_trajectory(theta, i0, dt, steps_per_obs, n_obs):
    traj = np.empty((steps_per_obs * n_obs + 1, 3))
    traj[0, 0] = 1.0 - i0
    traj[0, 1] = i0
    traj[0, 2] = 0.0
    _sir_integrate(theta, dt, steps_per_obs, n_obs, traj)
    return traj


@njit(cache=True)
def sir_backward(theta, i0, dt, steps_per_obs, n_obs, upstream):
    n = theta.shape[0]
    grad = np.zeros((n, 2))
    n_steps = steps_per_obs * n_obs
    traj = np.empty((n_steps + 1, 3))
    h2 = 0.5 * dt
    for row in range(n):
        beta, gamma = theta[row, 0], theta[row, 1]
        traj[0, 0] = 1.0 - i0
        traj[0, 1] = i0
        traj[0, 2] = 0.0
        _sir_integrate(theta[row], dt, steps_per_obs, n_obs, traj)
        as_, ai = 0.0, 0.0
        gb, gg = 0.0, 0.0
        for k in range(n_steps - 1, -1, -1):
            if (k + 1) % steps_per_obs == 0:
                ai += upstream[row, (k + 1) // steps_per_obs - 1]
            s, i = traj[k, 0], traj[k, 1]
            k1s, k1i = _sir_f(s, i, beta, gamma)
            u2s, u2i = s + h2 * k1s, i + h2 * k1i
            k2s, k2i = _sir_f(u2s, u2i, beta, gamma)
            u3s, u3i = s + h2 * k2s, i + h2 * k2i
            k3s, k3i = _sir_f(u3s, u3i, beta, gamma)
            u4s, u4i = s + dt * k3s, i + dt * k3i
            # adjoints of the stage slopes
            b1s, b1i = dt / 6.0 * as_, dt / 6.0 * ai
            b2s, b2i = dt / 3.0 * as_, dt / 3.0 * ai
            b3s, b3i = b2s, b2i
            b4s, b4i = b1s, b1i
            ys, yi = as_, ai
            us, ui, db, dg = _sir_vjp(u4s, u4i, beta, gamma, b4s, b4i)
            gb += db
            gg += dg
            ys += us
            yi += ui
            b3s += dt * us
            b3i += dt * ui
            us, ui, db, dg = _sir_vjp(u3s, u3i, beta, gamma, b3s, b3i)
            gb += db
            gg += dg
            ys += us
            yi += ui
            b2s += h2 * us
            b2i += h2 * ui
            us, ui, db, dg = _sir_vjp(u2s, u2i, beta, gamma, b2s, b2i)
            gb += db
            gg += dg
            ys += us
            yi += ui
            b1s += h2 * us
            b1i += h2 * ui
            us, ui, db, dg = _sir_vjp(s, i, beta, gamma, b1s, b1i)
            gb += db
            gg += dg
            as_ = ys + us
            ai = yi + ui
        grad[row, 0] = gb
        grad[row, 1] = gg
    return grad


@njit(cache=True)
def _lv_f(x, y, a, b, c, d):
    return a * x - b * x * y, -c * y + d * x * y


@njit(cache=True)
def _lv_vjp(x, y, a, b, c, d, vx, vy):
    dx = (a - b * y) * vx + d * y * vy
    dy = -b * x * vx + (-c + d * x) * vy
    return dx, dy, x * vx, -x * y * vx, -y * vy, x * y * vy


@njit(cache=True)
def _lv_integrate(theta, x0, y0, dt, n_steps, traj):
    a, b, c, d = theta[0], theta[1], theta[2], theta[3]
    traj[0, 0] = x0
    traj[0, 1] = y0
    for k in range(n_steps):
        x, y = traj[k, 0], traj[k, 1]
        k1x, k1y = _lv_f(x, y, a, b, c, d)
        k2x, k2y = _lv_f(x + 0.5 * dt * k1x, y + 0.5 * dt * k1y, a, b, c, d)
        k3x, k3y = _lv_f(x + 0.5 * dt * k2x, y + 0.5 * dt * k2y, a, b, c, d)
        k4x, k4y = _lv_f(x + dt * k3x, y + dt * k3y, a, b, c, d)
        traj[k + 1, 0] = x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        traj[k + 1, 1] = y + dt / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
        if not (np.isfinite(traj[k + 1, 0]) and np.isfinite(traj[k + 1, 1])):
            return False
    return True


@njit(cache=True)
def lv_forward(theta, x0, y0, dt, steps_per_obs, n_obs):
    n = theta.shape[0]
    n_steps = steps_per_obs * n_obs
    out = np.empty((n, 2 * n_obs))
    traj = np.empty((n_steps + 1, 2))
    ok = True
    for row in range(n):
        if not _lv_integrate(theta[row], x0, y0, dt, n_steps, traj):
            ok = False
        for j in range(n_obs):
            out[row, j] = traj[(j + 1) * steps_per_obs, 0]
            out[row, n_obs + j] = traj[(j + 1) * steps_per_obs, 1]
    return out, ok


@njit(cache=True)
def lv_trajectory(theta, x0, y0, dt, n_steps):
    traj = np.empty((n_steps + 1, 2))
    _lv_integrate(theta, x0, y0, dt, n_steps, traj)
    return traj


@njit(cache=True)
def lv_backward(theta, x0, y0, dt, steps_per_obs, n_obs, upstream):
    n = theta.shape[0]
    n_steps = steps_per_obs * n_obs
    grad = np.zeros((n, 4))
    traj = np.empty((n_steps + 1, 2))
    h2 = 0.5 * dt
    g = np.zeros(4)
    for row in range(n):
        a, b, c, d = theta[row, 0], theta[row, 1], theta[row, 2], theta[row, 3]
        _lv_integrate(theta[row], x0, y0, dt, n_steps, traj)
        ax, ay = 0.0, 0.0
        g[:] = 0.0
        for k in range(n_steps - 1, -1, -1):
            if (k + 1) % steps_per_obs == 0:
                j = (k + 1) // steps_per_obs - 1
                ax += upstream[row, j]
                ay += upstream[row, n_obs + j]
            x, y = traj[k, 0], traj[k, 1]
            k1x, k1y = _lv_f(x, y, a, b, c, d)
            u2x, u2y = x + h2 * k1x, y + h2 * k1y
            k2x, k2y = _lv_f(u2x, u2y, a, b, c, d)
            u3x, u3y = x + h2 * k2x, y + h2 * k2y
            k3x, k3y = _lv_f(u3x, u3y, a, b, c, d)
            u4x, u4y = x + dt * k3x, y + dt * k3y
            b1x, b1y = dt / 6.0 * ax, dt / 6.0 * ay
            b2x, b2y = dt / 3.0 * ax, dt / 3.0 * ay
            b3x, b3y = b2x, b2y
            yx, yy = ax, ay
            ux, uy, ga, gb, gc, gd = _lv_vjp(u4x, u4y, a, b, c, d, b1x, b1y)
            g[0] += ga
            g[1] += gb
            g[2] += gc
            g[3] += gd
            yx += ux
            yy += uy
            b3x += dt * ux
            b3y += dt * uy
            ux, uy, ga, gb, gc, gd = _lv_vjp(u3x, u3y, a, b, c, d, b3x, b3y)
            g[0] += ga
            g[1] += gb
            g[2] += gc
            g[3] += gd
            yx += ux
            yy += uy
            b2x += h2 * ux
            b2y += h2 * uy
            ux, uy, ga, gb, gc, gd = _lv_vjp(u2x, u2y, a, b, c, d, b2x, b2y)
            g[0] += ga
            g[1] += gb
            g[2] += gc
            g[3] += gd
            yx += ux
            yy += uy
            b1x += h2 * ux
            b1y += h2 * uy
            ux, uy, ga, gb, gc, gd = _lv_vjp(x, y, a, b, c, d, b1x, b1y)
            g[0] += ga
            g[1] += gb
            g[2] += gc
            g[3] += gd
            ax = yx + ux
            ay = yy + uy
        grad[row, :] = g
    return grad


def _steps(horizon, dt, n_obs):
    per_obs = horizon / n_obs / dt
    steps = int(round(per_obs))
    if steps < 1 or abs(per_obs - steps) > 1e-9:
        raise ValueError(f"horizon/n_obs must be a whole number of steps (got {per_obs} steps)")
    return steps


class SIR(SimTask):
    """Deterministic SIR; observes the infected fraction at 50 equally spaced times."""

    name = "sir"
    theta_dim = 2
    x_dim = 50
    deterministic = True
    population = 1e6
    source_median = (0.4, 0.125)
    source_log_std = (0.5, 0.2)

    def __init__(self, horizon=180.0, dt=0.1, n_obs=50):
        super().__init__([0.001, 0.001], [3.0, 3.0])
        self.horizon = float(horizon)
        self.dt = float(dt)
        self.n_obs = int(n_obs)
        self.x_dim = self.n_obs
        self.steps_per_obs = _steps(self.horizon, self.dt, self.n_obs)

    @property
    def i0(self):
        return 1.0 / self.population

    @property
    def times(self):
        return self.horizon / self.n_obs * np.arange(1, self.n_obs + 1)

    def forward(self, theta, noise=None):
        theta = self._check_theta(theta)
        out, ok = sir_forward(theta, self.i0, self.dt, self.steps_per_obs, self.n_obs)
        if not ok:
            raise DivergenceError("SIR integration produced a non-finite state")
        return out

    def backward(self, theta, noise, upstream):
        theta = self._check_theta(theta)
        upstream = np.ascontiguousarray(upstream, dtype=float)
        return sir_backward(theta, self.i0, self.dt, self.steps_per_obs, self.n_obs, upstream)

    def trajectory(self, theta) -> np.ndarray:
        """Full (S, I, R) counts after every RK4 step for one parameter pair."""
        theta = np.asarray(theta, dtype=float)
        return self.population * sir_trajectory(theta, self.i0, self.dt, self.steps_per_obs, self.n_obs)

    def original_source(self, n, rng):
        mu = np.log(self.source_median)
        sig = np.asarray(self.source_log_std)
        return rejection_fill(lambda k: np.exp(mu + sig * rng.standard_normal(k, 2)), n, self.lo, self.hi)

    def metadata(self):
        return {**super().metadata(), "horizon": self.horizon, "dt": self.dt, "n_obs": self.n_obs}


class LotkaVolterra(SimTask):
    """Predator-prey ODE observed at 50 times per species with Gaussian noise."""

    name = "lotka_volterra"
    theta_dim = 4
    x_dim = 100
    noise_std = 0.05
    x0 = 1.0
    y0 = 1.0

    def __init__(self, horizon=20.0, dt=0.01, n_obs=50):
        super().__init__([0.1] * 4, [3.0] * 4)
        self.horizon = float(horizon)
        self.dt = float(dt)
        self.n_obs = int(n_obs)
        self.x_dim = 2 * self.n_obs
        self.steps_per_obs = _steps(self.horizon, self.dt, self.n_obs)

    @property
    def times(self):
        return self.horizon / self.n_obs * np.arange(1, self.n_obs + 1)

    def draw_noise(self, n, rng):
        return self.noise_std * rng.standard_normal(n, self.x_dim)

    def solve(self, theta) -> np.ndarray:
        theta = self._check_theta(theta)
        out, ok = lv_forward(theta, self.x0, self.y0, self.dt, self.steps_per_obs, self.n_obs)
        if not ok:
            raise DivergenceError("Lotka-Volterra integration produced a non-finite state")
        return out

    def forward(self, theta, noise):
        out = self.solve(theta)
        return out if noise is None else out + noise

    def backward(self, theta, noise, upstream):
        theta = self._check_theta(theta)
        upstream = np.ascontiguousarray(upstream, dtype=float)
        return lv_backward(theta, self.x0, self.y0, self.dt, self.steps_per_obs, self.n_obs, upstream)

    def trajectory(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return lv_trajectory(theta, self.x0, self.y0, self.dt, self.steps_per_obs * self.n_obs)

    def original_source(self, n, rng):
        z = 0.5 * rng.standard_normal(n, 4)
        return np.exp(1.0 / (1.0 + np.exp(-z)))

    def metadata(self):
        return {**super().metadata(), "horizon": self.horizon, "dt": self.dt, "n_obs": self.n_obs}
