"""Numerical substrate: random streams, special functions, networks, Adam."""

from .gradcheck import finite_diff_grad, max_rel_error
from .io import load_net, net_from_bytes, net_to_bytes, save_net
from .nn import BatchNorm, DenseNet, Layer, sigmoid
from .optim import AdamState
from .rng import RngStream
from .special import digamma, log_unit_ball_volume, unit_ball_volume

__all__ = [
    "AdamState",
    "BatchNorm",
    "DenseNet",
    "Layer",
    "RngStream",
    "digamma",
    "finite_diff_grad",
    "load_net",
    "log_unit_ball_volume",
    "max_rel_error",
    "net_from_bytes",
    "net_to_bytes",
    "save_net",
    "sigmoid",
    "unit_ball_volume",
]
