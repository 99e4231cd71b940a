"""Differentiable simulators with their boxes and original sources."""

from .base import SimTask
from .benchmark import SLCP, AbsVal, InverseKinematics, TwoMoons
from .dataset import Dataset, generate_dataset
from .ode import SIR, LotkaVolterra

TASKS = {
    "two_moons": TwoMoons,
    "ik": InverseKinematics,
    "slcp": SLCP,
    "sir": SIR,
    "lotka_volterra": LotkaVolterra,
    "absval": AbsVal,
}
ALIASES = {"tm": "two_moons", "lv": "lotka_volterra", "inverse_kinematics": "ik"}


def get_task(name: str, **options) -> SimTask:
    """Instantiate a registered task; ``options`` override ODE settings."""
    key = ALIASES.get(name, name)
    if key not in TASKS:
        raise KeyError(f"unknown task {name!r}; choose from {sorted(TASKS)}")
    return TASKS[key](**options)


__all__ = [
    "SIR",
    "SLCP",
    "TASKS",
    "AbsVal",
    "Dataset",
    "InverseKinematics",
    "LotkaVolterra",
    "SimTask",
    "TwoMoons",
    "generate_dataset",
    "get_task",
]
