"""Synthetic observation datasets and their binary file format.

Layout (little-endian)::

    b"SRCD" | version u32 | name length u32 | name bytes (utf-8)
    | n u64 | d_x u32 | seed u64 | f64[n * d_x] row-major

A JSON manifest next to the file records the same header fields plus the
held-out fraction.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatVersionError
from ..numcore import RngStream
from .base import SimTask

MAGIC = b"SRCD"
VERSION = 1
HOLDOUT_FRACTION = 0.1


@dataclass
class Dataset:
    task: str
    seed: int
    data: np.ndarray
    holdout_fraction: float = HOLDOUT_FRACTION

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def n_holdout(self) -> int:
        return int(round(self.holdout_fraction * self.n))

    @property
    def train(self) -> np.ndarray:
        """Rows used for source estimation."""
        return self.data[: self.n - self.n_holdout]

    @property
    def holdout(self) -> np.ndarray:
        """Rows reserved for evaluation; never seen during training."""
        return self.data[self.n - self.n_holdout :]

    def to_bytes(self) -> bytes:
        name = self.task.encode()
        header = MAGIC + struct.pack("<II", VERSION, len(name)) + name
        header += struct.pack("<QIQ", self.data.shape[0], self.data.shape[1], self.seed)
        return header + np.ascontiguousarray(self.data, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes, holdout_fraction=HOLDOUT_FRACTION) -> "Dataset":
        if buf[:4] != MAGIC:
            raise ValueError("not a dataset file (bad magic)")
        version, name_len = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise FormatVersionError(f"dataset version {version}, expected {VERSION}")
        pos = 12
        name = buf[pos : pos + name_len].decode()
        pos += name_len
        n, d, seed = struct.unpack_from("<QIQ", buf, pos)
        pos += 20
        if len(buf) - pos != 8 * n * d:
            raise ValueError("dataset payload size does not match its header")
        data = np.frombuffer(buf, dtype="<f8", offset=pos).reshape(n, d).astype(float)
        return cls(name, seed, data, holdout_fraction)

    def manifest(self) -> dict:
        return {
            "format_version": VERSION,
            "task": self.task,
            "n": self.n,
            "d_x": int(self.data.shape[1]),
            "seed": self.seed,
            "holdout_fraction": self.holdout_fraction,
        }

    def save(self, path):
        path = Path(path)
        path.write_bytes(self.to_bytes())
        manifest_path(path).write_text(json.dumps(self.manifest(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        frac = HOLDOUT_FRACTION
        mpath = manifest_path(path)
        if mpath.exists():
            meta = json.loads(mpath.read_text())
            if meta.get("format_version") != VERSION:
                raise FormatVersionError(f"dataset manifest version {meta.get('format_version')}")
            frac = meta.get("holdout_fraction", frac)
        return cls.from_bytes(path.read_bytes(), frac)

    def to_csv(self, path):
        cols = ",".join(f"x{j}" for j in range(self.data.shape[1]))
        np.savetxt(path, self.data, delimiter=",", header=cols, comments="", fmt="%.17g")


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def generate_dataset(task: SimTask, n: int, seed: int) -> Dataset:
    """Simulate ``n`` observations from the task's original source."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = RngStream(seed)
    theta = task.original_source(n, rng.child("source"))
    x = task.simulate(theta, rng.child("noise"))
    return Dataset(task.name, int(seed), x)
