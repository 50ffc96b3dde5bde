"""Accuracy bookkeeping and the ACC / BWT / intransigence metrics.

Task indices are 0-based in code: row ``m`` of the accuracy matrix is the
model after training tasks ``0..m``.
"""
from __future__ import annotations

import csv
import json
import math
from fractions import Fraction
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import PreconditionError
from .model import Network, add_head, init_network, predict
from .taskgen import TaskDataset, TaskStream
from .training import TrainConfig, fit


def evaluate(net: Network, task: TaskDataset) -> float:
    """Test accuracy of ``task`` using its own head."""
    if task.task_id >= net.num_heads:
        raise PreconditionError(f"network has no head for task {task.task_id}")
    pred = predict(net, task.test.inputs, task.task_id)
    return float(np.mean(pred == task.local_labels(task.test)))


class AccuracyMatrix:
    """Lower-triangular A[m][t]; row m may only be written once task m is trained."""

    def __init__(self, num_tasks: int):
        if num_tasks <= 0:
            raise PreconditionError("need at least one task")
        self.K = num_tasks
        self.a = np.full((num_tasks, num_tasks), np.nan)
        self.trained = 0

    def mark_trained(self, m: int) -> None:
        if m != self.trained:
            raise PreconditionError(f"tasks must complete in order; expected {self.trained}, got {m}")
        self.trained += 1

    def record(self, m: int, t: int, value: float) -> None:
        if m >= self.trained:
            raise PreconditionError(f"row {m} written before task {m} finished training")
        if not 0 <= t <= m < self.K:
            raise PreconditionError(f"entry ({m}, {t}) outside the lower triangle")
        if not 0.0 <= value <= 1.0:
            raise PreconditionError(f"accuracy {value} outside [0, 1]")
        self.a[m, t] = value

    def row_complete(self, m: int) -> bool:
        return bool(np.all(np.isfinite(self.a[m, : m + 1])))

    def rows(self) -> list[list[float]]:
        return [[float(v) for v in self.a[m, : m + 1]] for m in range(self.K)]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "AccuracyMatrix":
        mat = cls(len(rows))
        for m, row in enumerate(rows):
            if len(row) != m + 1:
                raise PreconditionError(f"row {m} must have {m + 1} entries")
            mat.mark_trained(m)
            for t, v in enumerate(row):
                mat.record(m, t, float(v))
        return mat


def _exact(v: float) -> Fraction:
    # shortest round-trip decimal, so 0.97 is 97/100 rather than its binary neighbour
    return Fraction(repr(float(v)))


def compute_acc(m: AccuracyMatrix) -> float:
    """Mean final-row accuracy, summed exactly and rounded once."""
    if not m.row_complete(m.K - 1):
        raise PreconditionError("final row of the accuracy matrix is incomplete")
    return float(sum(_exact(v) for v in m.a[m.K - 1, :]) / m.K)


def compute_bwt(m: AccuracyMatrix) -> float:
    if m.K < 2:
        raise PreconditionError("backward transfer needs at least two tasks")
    if not m.row_complete(m.K - 1) or not np.all(np.isfinite(np.diag(m.a))):
        raise PreconditionError("diagonal and final row must be complete")
    total = sum(_exact(m.a[m.K - 1, t]) - _exact(m.a[t, t]) for t in range(m.K - 1))
    return float(total / (m.K - 1))


def compute_im(a_star_k: float, a_kk: float) -> float:
    for v in (a_star_k, a_kk):
        if not 0.0 <= v <= 1.0:
            raise PreconditionError(f"accuracy {v} outside [0, 1]")
    return float(_exact(a_star_k) - _exact(a_kk))


def joint_budget(cfg: TrainConfig, k: int) -> TrainConfig:
    """Epochs over the pooled data such that the step count is min(k, 3) single-task budgets."""
    factor = min(k, 3) / k
    epochs = max(1, round(cfg.epochs * factor)) if cfg.epochs else 0
    milestones = tuple(round(m * factor) for m in cfg.lr_milestones)
    return replace(cfg, epochs=epochs, lr_milestones=milestones)


def joint_oracle(
    stream: TaskStream,
    k: int,
    cfg: TrainConfig,
    widths: Sequence[int],
    normalization: bool = False,
) -> float:
    """A*_k: accuracy on task k (1-based) of a fresh multi-head network trained on tasks 1..k pooled."""
    if not 1 <= k <= stream.num_tasks:
        raise PreconditionError(f"k must lie in 1..{stream.num_tasks}, got {k}")
    tasks = stream.tasks[:k]
    if any(t.train is None for t in tasks):
        raise PreconditionError("joint training needs every pooled task's training data")
    net = init_network(widths, tasks[0].num_classes, cfg.seed, normalization=normalization)
    for task in tasks[1:]:
        add_head(net, task.num_classes)
    x = np.concatenate([t.train.inputs for t in tasks])
    y = np.concatenate([t.local_labels(t.train) for t in tasks])
    ids = np.concatenate([np.full(len(t.train), i) for i, t in enumerate(tasks)])
    budget = joint_budget(cfg, k)
    fit(net, x, y, ids, budget, cfg.lr_first_task, budget.epochs, purpose=0, key=0)
    return evaluate(net, tasks[-1])


@dataclass
class MetricReport:
    acc: float
    bwt: float | None
    im_per_task: list[float] = field(default_factory=list)
    a_star: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"acc": self.acc, "bwt": self.bwt, "im": list(self.im_per_task), "a_star": list(self.a_star)}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(d["acc"], d["bwt"], list(d.get("im", [])), list(d.get("a_star", [])))


def metric_report(m: AccuracyMatrix, a_star: Sequence[float] | None = None) -> MetricReport:
    a_star = list(a_star or [])
    im = [compute_im(s, float(m.a[k, k])) for k, s in enumerate(a_star)]
    bwt = compute_bwt(m) if m.K >= 2 else None
    return MetricReport(compute_acc(m), bwt, im, a_star)


# -- persistence -------------------------------------------------------------

def write_matrix_csv(m: AccuracyMatrix, path: str | Path) -> None:
    """One line per trained row: ``after_task, acc_task0, acc_task1, ...`` (blank above diagonal)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["after_task"] + [f"task{t}" for t in range(m.K)])
        for r in range(m.K):
            w.writerow([r] + [repr(float(m.a[r, t])) if t <= r and math.isfinite(m.a[r, t]) else "" for t in range(m.K)])


def read_matrix_csv(path: str | Path) -> AccuracyMatrix:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return AccuracyMatrix.from_rows([[float(v) for v in r[1 : i + 2]] for i, r in enumerate(rows)])


def write_metrics_json(report: MetricReport, m: AccuracyMatrix, path: str | Path) -> None:
    payload = report.to_dict() | {"matrix": m.rows()}
    Path(path).write_text(json.dumps(payload, indent=2))


def read_metrics_json(path: str | Path) -> tuple[MetricReport, AccuracyMatrix]:
    d = json.loads(Path(path).read_text())
    return MetricReport.from_dict(d), AccuracyMatrix.from_rows(d["matrix"])


def write_metrics_csv(report: MetricReport, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "task", "value"])
        w.writerow(["acc", "", repr(report.acc)])
        w.writerow(["bwt", "", "" if report.bwt is None else repr(report.bwt)])
        for k, v in enumerate(report.a_star):
            w.writerow(["a_star", k, repr(v)])
        for k, v in enumerate(report.im_per_task):
            w.writerow(["im", k, repr(v)])
