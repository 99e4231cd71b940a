"""Binary weight files.

Layout (little-endian)::

    b"SRCW" | version u32 | layer count u32
    per layer: fan_in u32 | fan_out u32 | activation u8 | batch-norm u8
               weight f64[fan_in * fan_out] (row-major) | bias f64[fan_out]
               [gamma | beta | running mean | running var] f64[fan_out] each
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatVersionError
from .nn import ACTIVATIONS, BatchNorm, DenseNet, Layer

MAGIC = b"SRCW"
VERSION = 1
_F64 = np.dtype("<f8")


def net_to_bytes(net: DenseNet) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(net.layers))]
    for layer in net.layers:
        out.append(
            struct.pack(
                "<IIBB",
                layer.fan_in,
                layer.fan_out,
                ACTIVATIONS.index(layer.activation),
                int(layer.bn is not None),
            )
        )
        arrays = [layer.weight, layer.bias]
        if layer.bn is not None:
            bn = layer.bn
            arrays += [bn.gamma, bn.beta, bn.running_mean, bn.running_var]
        out += [np.ascontiguousarray(a, dtype=_F64).tobytes() for a in arrays]
    return b"".join(out)


def net_from_bytes(buf: bytes) -> DenseNet:
    if buf[:4] != MAGIC:
        raise ValueError("not a weight file (bad magic)")
    version, n_layers = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatVersionError(f"weight file version {version}, expected {VERSION}")
    pos = 12
    layers = []

    def take(count):
        nonlocal pos
        arr = np.frombuffer(buf, dtype=_F64, count=count, offset=pos).astype(float)
        pos += 8 * count
        return arr

    for _ in range(n_layers):
        fan_in, fan_out, act, has_bn = struct.unpack_from("<IIBB", buf, pos)
        pos += 10
        w = take(fan_in * fan_out).reshape(fan_in, fan_out)
        b = take(fan_out)
        bn = None
        if has_bn:
            bn = BatchNorm(take(fan_out), take(fan_out), take(fan_out), take(fan_out))
        layers.append(Layer(w, b, ACTIVATIONS[act], bn))
    if pos != len(buf):
        raise ValueError("trailing bytes in weight file")
    net = DenseNet(layers, training=False)
    net.check()
    return net


def save_net(net: DenseNet, path):
    Path(path).write_bytes(net_to_bytes(net))


def load_net(path) -> DenseNet:
    return net_from_bytes(Path(path).read_bytes())
