"""Experiment configuration files (TOML).

Example::

    format_version = 1
    task = "ik"
    mode = "direct"              # or "surrogate" (then set `surrogate`)
    output_dir = "runs/ik"

    [dataset]
    path = "data/ik.srcd"        # created from n/seed if missing
    n = 10000
    seed = 7

    [train]
    lambda_final = 0.35          # or "none"
    max_iter = 10000
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from ._toml import TOMLDecodeError, loads_toml
from .errors import FormatVersionError
from .simulators import TASKS
from .simulators import ALIASES as TASK_ALIASES
from .training import FORMAT_VERSION, TrainConfig

SEED_ENV = "SOURCERER_SEED"
TOP_KEYS = {"format_version", "task", "mode", "surrogate", "output_dir", "dataset", "train", "task_options"}
DATASET_KEYS = {"path", "n", "seed"}


class ConfigError(ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)


def env_seed(default=0) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None


@dataclass
class ExperimentConfig:
    task: str
    train: TrainConfig
    output_dir: Path = Path("runs")
    mode: str = "direct"
    surrogate: Path | None = None
    dataset_path: Path | None = None
    dataset_n: int | None = None
    dataset_seed: int | None = None
    task_options: dict = field(default_factory=dict)
    seed_in_file: bool = False

    def to_dict(self) -> dict:
        d = {"format_version": FORMAT_VERSION, "task": self.task, "mode": self.mode,
             "output_dir": str(self.output_dir)}
        if self.surrogate is not None:
            d["surrogate"] = str(self.surrogate)
        ds = {}
        if self.dataset_path is not None:
            ds["path"] = str(self.dataset_path)
        if self.dataset_n is not None:
            ds["n"] = self.dataset_n
        if self.dataset_seed is not None:
            ds["seed"] = self.dataset_seed
        d["dataset"] = ds
        if self.task_options:
            d["task_options"] = dict(self.task_options)
        d["train"] = self.train.to_dict()
        return d


def _line_of(text: str, section: str | None, key: str) -> int | None:
    """1-based line of ``key = ...`` inside ``[section]`` (top level if None)."""
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        head = re.match(r"^\s*\[([^\]]+)\]\s*(#.*)?$", line)
        if head:
            current = head.group(1).strip()
            continue
        if current == section and re.match(rf"^\s*{re.escape(key)}\s*=", line):
            return no
    return None


def parse_experiment(text: str, path="<config>", base_dir: Path | None = None) -> ExperimentConfig:
    try:
        doc = loads_toml(text)
    except TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(str(exc), path, int(m.group(1)) if m else None) from None

    def fail(msg, section, key):
        raise ConfigError(msg, path, _line_of(text, section, key))

    version = doc.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"{path}: config format_version {version}, expected {FORMAT_VERSION}")
    for key in doc:
        if key not in TOP_KEYS:
            fail(f"unknown key {key!r}", None, key)
    if "task" not in doc:
        raise ConfigError("missing required key 'task'", path, 1)
    task = TASK_ALIASES.get(doc["task"], doc["task"])
    if task not in TASKS:
        fail(f"unknown task {doc['task']!r}; choose from {sorted(TASKS)}", None, "task")
    mode = doc.get("mode", "direct")
    if mode not in ("direct", "surrogate"):
        fail(f"mode must be 'direct' or 'surrogate', got {mode!r}", None, "mode")
    base_dir = Path(base_dir) if base_dir is not None else Path(path).parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    surrogate = doc.get("surrogate")
    if mode == "surrogate":
        if surrogate is None:
            raise ConfigError("mode 'surrogate' requires a 'surrogate' path", path, _line_of(text, None, "mode"))
        surrogate = resolve(surrogate)
        if not surrogate.exists():
            fail(f"surrogate file {surrogate} does not exist", None, "surrogate")
    elif surrogate is not None:
        surrogate = resolve(surrogate)

    ds = doc.get("dataset", {})
    for key in ds:
        if key not in DATASET_KEYS:
            fail(f"unknown key {key!r} in [dataset]", "dataset", key)
    ds_path = resolve(ds["path"]) if "path" in ds else None
    n, seed = ds.get("n"), ds.get("seed")
    if n is not None and (not isinstance(n, int) or n < 1):
        fail("dataset n must be a positive integer", "dataset", "n")
    if ds_path is None and n is None:
        raise ConfigError("[dataset] needs a path or a generation spec (n, seed)", path, _line_of(text, None, "task"))
    if ds_path is not None and not ds_path.exists() and n is None:
        fail(f"dataset {ds_path} does not exist and no generation spec is given", "dataset", "path")

    train_doc = dict(doc.get("train", {}))
    try:
        train = TrainConfig.from_dict(train_doc)
    except KeyError as exc:
        name = re.findall(r"option\(s\): (\w+)", str(exc))
        fail(str(exc.args[0]), "train", name[0] if name else "")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[train]: {exc}", path, _line_of(text, None, "train") or _first_section(text, "train")) from None

    return ExperimentConfig(
        task=task,
        train=train,
        output_dir=resolve(doc.get("output_dir", "runs")),
        mode=mode,
        surrogate=surrogate,
        dataset_path=ds_path,
        dataset_n=n,
        dataset_seed=seed,
        task_options=dict(doc.get("task_options", {})),
        seed_in_file="seed" in train_doc,
    )


def _first_section(text, name):
    for no, line in enumerate(text.splitlines(), 1):
        if line.strip() == f"[{name}]":
            return no
    return None


def load_experiment(path) -> ExperimentConfig:
    path = Path(path)
    return parse_experiment(path.read_text(), path, path.parent)
