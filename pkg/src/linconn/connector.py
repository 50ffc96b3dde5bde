"""Weight-space interpolation between the two tracks and the beta path scan."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import PreconditionError
from .model import Network, map_arrays
from .taskgen import TaskDataset


@dataclass(frozen=True)
class PathScan:
    betas: np.ndarray
    per_task_accuracy: np.ndarray  # (len(betas), task_count)
    task_ids: tuple[int, ...]

    @property
    def task_count(self) -> int:
        return len(self.task_ids)

    def curve(self, task_id: int) -> np.ndarray:
        return self.per_task_accuracy[:, self.task_ids.index(task_id)]

    def max_jump(self) -> float:
        if len(self.betas) < 2:
            return 0.0
        return float(np.abs(np.diff(self.per_task_accuracy, axis=0)).max())


def interpolate(w_stable: Network, w_plastic: Network, beta: float) -> Network:
    """(1 - beta) * stable + beta * plastic, norm statistics included.

    Evaluated as ``stable + beta * (plastic - stable)`` so that identical
    inputs come back unchanged for every beta; the endpoints are exact copies.
    """
    if not 0.0 <= beta <= 1.0:
        raise PreconditionError(f"beta must lie in [0, 1], got {beta}")
    if not w_stable.same_architecture(w_plastic):
        raise PreconditionError("cannot interpolate networks with different architectures")
    # a + 1*(b - a) need not round back to b, and a + 0.0 turns -0.0 into +0.0
    if beta == 0.0:
        return w_stable.copy()
    if beta == 1.0:
        return w_plastic.copy()
    return map_arrays(lambda a, b: a + beta * (b - a), w_stable, w_plastic)


def fuse(w_stable: Network, w_plastic: Network, t: int) -> Network:
    """Fused model after task ``t`` (1-based): beta = 1/t."""
    if t < 2:
        raise PreconditionError(f"fusion starts at the second task, got t={t}")
    return interpolate(w_stable, w_plastic, 1.0 / t)


def centroid(weights: Sequence[Network]) -> Network:
    """Coordinate-wise mean, the minimiser of sum_i ||W - W_i||^2."""
    if not weights:
        raise PreconditionError("centroid of an empty set")
    k = len(weights)
    return map_arrays(lambda *arrs: np.sum(arrs, axis=0) / k, *weights)


def beta_grid(grid_size: int) -> np.ndarray:
    if grid_size < 2:
        raise PreconditionError("a beta grid needs at least the two endpoints")
    return np.linspace(0.0, 1.0, grid_size)


def scan_path(
    w_stable: Network,
    w_plastic: Network,
    grid: int | Sequence[float],
    eval_tasks: Sequence[TaskDataset],
) -> PathScan:
    """Task-incremental test accuracy of every task at each beta on the line."""
    from .evaluation import evaluate

    betas = beta_grid(grid) if isinstance(grid, (int, np.integer)) else np.asarray(grid, dtype=np.float64)
    if betas.size < 2 or betas[0] != 0.0 or betas[-1] != 1.0 or np.any(np.diff(betas) <= 0):
        raise PreconditionError("beta grid must be strictly increasing from 0 to 1")
    acc = np.empty((betas.size, len(eval_tasks)))
    for i, beta in enumerate(betas):
        net = interpolate(w_stable, w_plastic, float(beta))
        for j, task in enumerate(eval_tasks):
            acc[i, j] = evaluate(net, task)
    return PathScan(betas, acc, tuple(t.task_id for t in eval_tasks))


def write_scan_csv(scan: PathScan, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta", "task_id", "accuracy"])
        for i, beta in enumerate(scan.betas):
            for j, t in enumerate(scan.task_ids):
                w.writerow([repr(float(beta)), t, repr(float(scan.per_task_accuracy[i, j]))])


def read_scan_csv(path: str | Path) -> PathScan:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    betas = sorted({float(r["beta"]) for r in rows})
    tasks = sorted({int(r["task_id"]) for r in rows})
    acc = np.empty((len(betas), len(tasks)))
    for r in rows:
        acc[betas.index(float(r["beta"])), tasks.index(int(r["task_id"]))] = float(r["accuracy"])
    return PathScan(np.array(betas), acc, tuple(tasks))
