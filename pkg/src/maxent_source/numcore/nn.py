"""Feed-forward networks with hand-written reverse mode.

Each layer computes ``act(bn(x @ W + b))``; batch normalization is optional
per layer. ``DenseNet.forward`` caches what ``DenseNet.backward`` needs, so
the two must be called in pairs on the same batch.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("identity", "relu", "sigmoid", "tanh")
BN_EPS = 1e-5


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _act(name, z):
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, z, a, upstream):
    if name == "identity":
        return upstream
    if name == "relu":
        return upstream * (z > 0)
    if name == "sigmoid":
        return upstream * a * (1.0 - a)
    if name == "tanh":
        return upstream * (1.0 - a * a)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def fresh(cls, width: int, momentum: float = 0.1) -> "BatchNorm":
        return cls(np.ones(width), np.zeros(width), np.zeros(width), np.ones(width), momentum)


@dataclass
class Layer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray
    activation: str = "identity"
    bn: BatchNorm | None = None

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]


@dataclass
class _Cache:
    x: np.ndarray
    z: np.ndarray  # affine output
    a: np.ndarray  # activation output
    xhat: np.ndarray | None = None
    inv_std: np.ndarray | None = None
    batch_stats: bool = False


@dataclass
class DenseNet:
    layers: list[Layer]
    training: bool = True
    _cache: list[_Cache] | None = field(default=None, repr=False, compare=False)

    @classmethod
    def build(
        cls,
        sizes: list[int],
        activations: list[str],
        batch_norm: list[bool] | bool = False,
        rng=None,
    ) -> "DenseNet":
        """Glorot-uniform weights, zero biases.

        ``sizes`` lists every width including input and output, so a net with
        ``len(sizes) - 1`` layers results.
        """
        n_layers = len(sizes) - 1
        if len(activations) != n_layers:
            raise ValueError("need one activation per layer")
        if isinstance(batch_norm, bool):
            batch_norm = [batch_norm] * n_layers
        layers = []
        for i in range(n_layers):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            u = rng.uniform(fan_in, fan_out) if rng is not None else np.random.rand(fan_in, fan_out)
            w = limit * (2.0 * u - 1.0)
            if activations[i] not in ACTIVATIONS:
                raise ValueError(f"unknown activation {activations[i]!r}")
            bn = BatchNorm.fresh(fan_out) if batch_norm[i] else None
            layers.append(Layer(w, np.zeros(fan_out), activations[i], bn))
        net = cls(layers)
        net.check()
        return net

    @classmethod
    def mlp(cls, n_in, hidden, n_out, *, out_activation="identity", batch_norm=True, rng=None):
        """ReLU hidden stack with optional batch norm; plain final layer."""
        sizes = [n_in, *hidden, n_out]
        acts = ["relu"] * len(hidden) + [out_activation]
        bns = [batch_norm] * len(hidden) + [False]
        return cls.build(sizes, acts, bns, rng=rng)

    def check(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.fan_out != nxt.fan_in:
                raise ValueError(f"layer widths do not chain: {prev.fan_out} -> {nxt.fan_in}")
        for layer in self.layers:
            if layer.bn is not None and np.any(layer.bn.running_var <= 0):
                raise ValueError("running variance must be positive")

    @property
    def n_in(self) -> int:
        return self.layers[0].fan_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].fan_out

    @property
    def has_batch_norm(self) -> bool:
        return any(layer.bn is not None for layer in self.layers)

    def train(self) -> "DenseNet":
        self.training = True
        return self

    def eval(self) -> "DenseNet":
        self.training = False
        return self

    def copy(self) -> "DenseNet":
        out = copy.deepcopy(self)
        out._cache = None
        return out

    # parameters -----------------------------------------------------------

    def params(self) -> list[np.ndarray]:
        """Trainable arrays, by reference, in a fixed order."""
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
            if layer.bn is not None:
                out += [layer.bn.gamma, layer.bn.beta]
        return out

    def buffers(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            if layer.bn is not None:
                out += [layer.bn.running_mean, layer.bn.running_var]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} values, got {flat.size}")
        pos = 0
        for p in self.params():
            p[...] = flat[pos : pos + p.size].reshape(p.shape)
            pos += p.size

    def state(self) -> list[np.ndarray]:
        """Copies of parameters and running statistics."""
        return [a.copy() for a in self.params() + self.buffers()]

    def load_state(self, state: list[np.ndarray]):
        for dst, src in zip(self.params() + self.buffers(), state, strict=True):
            dst[...] = src

    # passes ---------------------------------------------------------------

    def forward(self, x: np.ndarray, update_stats: bool = True) -> np.ndarray:
        """Batch forward pass.

        In train mode, batch-norm layers normalize with batch statistics and,
        when ``update_stats`` is set, fold them into the running estimates.
        """
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"input must be (n, {self.n_in}), got {x.shape}")
        if self.training and self.has_batch_norm and x.shape[0] < 2:
            raise ValueError("batch norm in train mode needs at least 2 rows")
        cache = []
        h = x
        for layer in self.layers:
            z = h @ layer.weight + layer.bias
            c = _Cache(x=h, z=z, a=z)
            if layer.bn is not None:
                bn = layer.bn
                if self.training:
                    mu = z.mean(axis=0)
                    var = z.var(axis=0)
                    if update_stats:
                        n = z.shape[0]
                        bn.running_mean[...] = (1 - bn.momentum) * bn.running_mean + bn.momentum * mu
                        bn.running_var[...] = (1 - bn.momentum) * bn.running_var + bn.momentum * var * n / (
                            n - 1
                        )
                    c.batch_stats = True
                else:
                    mu, var = bn.running_mean, bn.running_var
                c.inv_std = 1.0 / np.sqrt(var + BN_EPS)
                c.xhat = (z - mu) * c.inv_std
                pre = bn.gamma * c.xhat + bn.beta
            else:
                pre = z
            c.z = pre
            c.a = _act(layer.activation, pre)
            cache.append(c)
            h = c.a
        self._cache = cache
        return h

    __call__ = forward

    def backward(self, upstream: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Gradients of ``sum(upstream * output)``.

        Returns the input gradient and a list of parameter gradients aligned
        with :meth:`params`.
        """
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        g = np.asarray(upstream, dtype=float)
        if g.shape != self._cache[-1].a.shape:
            raise ValueError(f"upstream shape {g.shape} != output shape {self._cache[-1].a.shape}")
        grads_rev = []
        for layer, c in zip(reversed(self.layers), reversed(self._cache)):
            g = _act_grad(layer.activation, c.z, c.a, g)
            if layer.bn is not None:
                bn = layer.bn
                dgamma = np.sum(g * c.xhat, axis=0)
                dbeta = np.sum(g, axis=0)
                dxhat = g * bn.gamma
                if c.batch_stats:
                    n = g.shape[0]
                    g = (c.inv_std / n) * (
                        n * dxhat - dxhat.sum(axis=0) - c.xhat * np.sum(dxhat * c.xhat, axis=0)
                    )
                else:
                    g = dxhat * c.inv_std
                grads_rev += [dbeta, dgamma]
            dw = c.x.T @ g
            db = g.sum(axis=0)
            grads_rev += [db, dw]
            g = g @ layer.weight.T
        return g, grads_rev[::-1]
