from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .recurrence_core import UniformGrid

MOMENT_BATCH = 32


def batch_stats(values: np.ndarray, batch: int = MOMENT_BATCH):
    """Mean over axis 0 with a standard error from independent batch means."""
    values = np.asarray(values, dtype=float)
    P = values.shape[0]
    mean = values.mean(axis=0)
    n_b = P // batch
    if n_b >= 2:
        means = values[: n_b * batch].reshape((n_b, batch) + values.shape[1:]).mean(axis=1)
        se = means.std(axis=0, ddof=1) / math.sqrt(n_b)
    elif P >= 2:
        se = values.std(axis=0, ddof=1) / math.sqrt(P)
    else:
        se = np.zeros_like(mean)
    return mean, se


@dataclass
class StochasticEnsemble:
    """Independent solution paths, states of shape ``(n_paths, n, dim)``.

    ``step_offset`` is the position of the first grid step inside the keyed
    noise streams of ``seed``, so another run can reuse the same increments.
    """

    grid: UniformGrid
    states: np.ndarray
    seed: int
    initial_law: str = "zero"
    step_offset: int = 0

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        if s.ndim != 3 or s.shape[1] != self.grid.n:
            raise ValueError(f"states shape {s.shape} does not fit grid of {self.grid.n} samples")
        if not np.all(np.isfinite(s)):
            raise ValueError("ensemble states must be finite")
        self.states = s

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def second_moment(self):
        """Estimated E|x(t)|^2 per grid time with batch standard errors."""
        return batch_stats(np.sum(self.states**2, axis=2))

    def at(self, t: float) -> np.ndarray:
        return self.states[:, self.grid.index_of(t), :]

    def to_json(self) -> str:
        return json.dumps(
            {
                "grid": self.grid.to_dict(),
                "seed": self.seed,
                "initial_law": self.initial_law,
                "step_offset": self.step_offset,
                "states": self.states.tolist(),
            }
        )

    def to_csv(self, wide: bool = True) -> str | list:
        """One wide table (t, then p<i>_v<j> columns), or one table per path."""
        times = self.grid.times
        if wide:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["t"] + [f"p{p}_v{j + 1}" for p in range(self.n_paths) for j in range(self.dim)])
            flat = self.states.transpose(1, 0, 2).reshape(self.grid.n, -1)
            for t, row in zip(times, flat):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in row])
            return buf.getvalue()
        tables = []
        for p in range(self.n_paths):
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["t"] + [f"v{j + 1}" for j in range(self.dim)])
            for t, row in zip(times, self.states[p]):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in row])
            tables.append(buf.getvalue())
        return tables
