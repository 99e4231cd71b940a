"""Sample-based maximum-entropy source distribution estimation."""

from .entropy import kole_entropy
from .sampler import SourceSampler
from .simulators import Dataset, generate_dataset, get_task
from .swd import swd
from .training import DEFAULT_GRID, RunResult, TrainConfig, sweep, train

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_GRID",
    "Dataset",
    "RunResult",
    "SourceSampler",
    "TrainConfig",
    "generate_dataset",
    "get_task",
    "kole_entropy",
    "sweep",
    "swd",
    "train",
]
