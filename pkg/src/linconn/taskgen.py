"""Synthetic task streams with disjoint, contiguous class splits.

Randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence([seed, class_id, ...])``, so every class's samples are a pure
function of ``(seed, class_id)`` and do not depend on which other classes are
generated alongside it.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import PreconditionError

GAUSSIAN_RADIUS = 3.0
GAUSSIAN_SIGMA = 1.0


@dataclass(frozen=True)
class StreamSpec:
    generator: str = "gaussian"
    num_classes: int = 10
    num_tasks: int = 5
    input_dim: int = 16
    per_class_train: int = 200
    per_class_test: int = 100
    seed: int = 0

    @property
    def classes_per_task(self) -> int:
        return self.num_classes // self.num_tasks


@dataclass
class Split:
    inputs: np.ndarray
    labels: np.ndarray  # global class ids

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class TaskDataset:
    task_id: int
    class_ids: tuple[int, ...]
    train: Split | None
    test: Split

    def local_labels(self, split: Split) -> np.ndarray:
        """Global class ids mapped to this task's head indices."""
        return split.labels - self.class_ids[0]

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)

    def without_train(self) -> "TaskDataset":
        return TaskDataset(self.task_id, self.class_ids, None, self.test)


@dataclass
class TaskStream:
    spec: StreamSpec
    tasks: list[TaskDataset] = field(default_factory=list)

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    @property
    def total_classes(self) -> int:
        return sum(t.num_classes for t in self.tasks)


def _class_mean(class_id: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, class_id, 0])
    direction = rng.normal(size=dim)
    return GAUSSIAN_RADIUS * direction / np.linalg.norm(direction)


def gaussian_generator(class_id: int, n: int, seed: int, dim: int = 16, sigma: float = GAUSSIAN_SIGMA) -> np.ndarray:
    """``n`` isotropic Gaussian points around the class's mean on the radius-3 sphere."""
    if n <= 0:
        raise PreconditionError("n must be positive")
    mean = _class_mean(class_id, dim, seed)
    rng = np.random.default_rng([seed, class_id, 1])
    return mean + sigma * rng.normal(size=(n, dim))


def two_rings_generator(class_id: int, n: int, seed: int, dim: int = 16, noise: float = 0.15) -> np.ndarray:
    """Concentric rings: classes 2k and 2k+1 share a random plane and centre
    but sit at radius 1 and 2.5, so no linear map separates a pair."""
    if n <= 0:
        raise PreconditionError("n must be positive")
    pair = class_id // 2
    prng = np.random.default_rng([seed, pair, 2])
    basis, _ = np.linalg.qr(prng.normal(size=(dim, 2)))
    centre = prng.normal(size=dim)
    radius = 1.0 if class_id % 2 == 0 else 2.5
    rng = np.random.default_rng([seed, class_id, 1])
    angle = rng.uniform(0.0, 2.0 * np.pi, size=n)
    ring = radius * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    return centre + ring @ basis.T + noise * rng.normal(size=(n, dim))


GENERATORS = {"gaussian": gaussian_generator, "two-rings": two_rings_generator}


def make_stream(spec: StreamSpec) -> TaskStream:
    if spec.generator not in GENERATORS:
        raise PreconditionError(f"unknown generator {spec.generator!r}; choose from {sorted(GENERATORS)}")
    if spec.num_tasks <= 0 or spec.num_classes <= 0 or spec.num_classes % spec.num_tasks:
        raise PreconditionError(f"{spec.num_tasks} tasks do not evenly split {spec.num_classes} classes")
    if min(spec.per_class_train, spec.per_class_test, spec.input_dim) <= 0:
        raise PreconditionError("sample counts and input dim must be positive")
    gen = GENERATORS[spec.generator]
    per = spec.classes_per_task
    n_tr, n_te = spec.per_class_train, spec.per_class_test
    tasks = []
    for t in range(spec.num_tasks):
        class_ids = tuple(range(t * per, (t + 1) * per))
        xs_tr, xs_te, ys_tr, ys_te = [], [], [], []
        for c in class_ids:
            x = gen(c, n_tr + n_te, spec.seed, spec.input_dim)
            xs_tr.append(x[:n_tr])
            xs_te.append(x[n_tr:])
            ys_tr.append(np.full(n_tr, c))
            ys_te.append(np.full(n_te, c))
        tasks.append(
            TaskDataset(
                t,
                class_ids,
                Split(np.concatenate(xs_tr), np.concatenate(ys_tr)),
                Split(np.concatenate(xs_te), np.concatenate(ys_te)),
            )
        )
    return TaskStream(spec, tasks)


def check_stream(stream: TaskStream) -> None:
    """Raise if class ownership or labels break the split invariants."""
    seen: set[int] = set()
    for task in stream.tasks:
        owned = set(task.class_ids)
        if owned & seen:
            raise PreconditionError(f"task {task.task_id} reuses classes {sorted(owned & seen)}")
        seen |= owned
        for split in (task.train, task.test):
            if split is not None and not set(np.unique(split.labels).tolist()) <= owned:
                raise PreconditionError(f"task {task.task_id} has labels outside its classes")
    if seen != set(range(len(seen))):
        raise PreconditionError("class ids do not cover 0..C-1")
    sizes = {t.num_classes for t in stream.tasks}
    if len(sizes) > 1:
        raise PreconditionError("tasks own different numbers of classes")


# -- CSV export --------------------------------------------------------------

def _write_split(path: Path, split: Split) -> None:
    dim = split.inputs.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(dim)] + ["label"])
        for row, y in zip(split.inputs, split.labels):
            w.writerow([repr(float(v)) for v in row] + [int(y)])


def _read_split(path: Path) -> Split:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    data = np.array([[float(v) for v in r[:-1]] for r in rows])
    return Split(data, np.array([int(r[-1]) for r in rows], dtype=np.int64))


def export_stream(stream: TaskStream, directory: str | Path) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"spec": asdict(stream.spec), "tasks": []}
    for task in stream.tasks:
        entry = {"task_id": task.task_id, "class_ids": list(task.class_ids), "test": f"task{task.task_id}_test.csv"}
        _write_split(out / entry["test"], task.test)
        if task.train is not None:
            entry["train"] = f"task{task.task_id}_train.csv"
            _write_split(out / entry["train"], task.train)
        manifest["tasks"].append(entry)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def import_stream(directory: str | Path) -> TaskStream:
    src = Path(directory)
    manifest = json.loads((src / "manifest.json").read_text())
    tasks = []
    for entry in manifest["tasks"]:
        train = _read_split(src / entry["train"]) if "train" in entry else None
        tasks.append(TaskDataset(entry["task_id"], tuple(entry["class_ids"]), train, _read_split(src / entry["test"])))
    stream = TaskStream(StreamSpec(**manifest["spec"]), tasks)
    check_stream(stream)
    return stream
