"""End-to-end experiment orchestration and result artifacts.

A run trains the task stream in order, fuses the two tracks after each task
according to the chosen variant, fills the accuracy matrix row by row, then
computes ACC / BWT / intransigence. Previous tasks' training splits are
released as soon as their covariance has been merged; only test splits,
covariances and checkpoints outlive a task.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .connector import PathScan, interpolate, scan_path, write_scan_csv
from .errors import PreconditionError, StageError
from .evaluation import (
    AccuracyMatrix,
    MetricReport,
    evaluate,
    joint_oracle,
    metric_report,
    read_metrics_json,
    write_matrix_csv,
    write_metrics_json,
)
from .model import Network, init_network, network_to_arrays, save_arrays
from .nullspace import (
    LayerCovariance,
    Projector,
    accumulate_covariance,
    build_projector,
    covariances_to_arrays,
    merge_all,
    projector_to_arrays,
)
from .taskgen import StreamSpec, TaskDataset, make_stream
from .training import StepHook, TrainConfig, train_first_task, train_task_dual, train_task_finetune

log = logging.getLogger(__name__)

VARIANTS = ("connector", "stability-only", "plasticity-only", "fixed-beta", "naive-finetune")


@dataclass(frozen=True)
class ExperimentConfig:
    stream: StreamSpec = StreamSpec()
    train: TrainConfig = TrainConfig()
    hidden: tuple[int, ...] = (64, 64)
    normalization: bool = False
    variant: str = "connector"
    beta: float | None = None
    sweep_grid: int = 0  # 0 disables per-task beta scans
    joint_oracle: bool = True
    save_checkpoints: bool = True
    output_dir: str | None = None
    run_id: str = "run"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise PreconditionError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if (self.beta is not None) != (self.variant == "fixed-beta"):
            raise PreconditionError("a beta override goes with, and only with, the fixed-beta variant")
        if self.beta is not None and not 0.0 <= self.beta <= 1.0:
            raise PreconditionError("beta must lie in [0, 1]")
        if self.sweep_grid == 1 or self.sweep_grid < 0:
            raise PreconditionError("sweep_grid must be 0 (off) or >= 2")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.stream.input_dim, *self.hidden)

    def beta_for(self, t: int) -> float:
        """Fusion coefficient after task ``t`` (0-based, t >= 1)."""
        return {
            "connector": 1.0 / (t + 1),
            "stability-only": 0.0,
            "plasticity-only": 1.0,
            "fixed-beta": self.beta,
        }[self.variant]

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        d["train"]["lr_milestones"] = list(self.train.lr_milestones)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise PreconditionError(f"unknown config keys: {sorted(unknown)}")
        stream = StreamSpec(**d.pop("stream", {}))
        train = dict(d.pop("train", {}))
        if "lr_milestones" in train:
            train["lr_milestones"] = tuple(train["lr_milestones"])
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(stream=stream, train=TrainConfig(**train), **d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(
            self,
            stream=dataclasses.replace(self.stream, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
        )


def set_path(d: dict[str, Any], dotted: str, value: Any) -> None:
    """Assign ``value`` at a dotted key path such as ``train.lr_first_task``."""
    *parents, leaf = dotted.split(".")
    for p in parents:
        d = d.setdefault(p, {})
    d[leaf] = value


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """File values over defaults, then ``overrides`` (dotted key paths) over the file."""
    d = json.loads(Path(path).read_text())
    for k, v in (overrides or {}).items():
        set_path(d, k, v)
    return ExperimentConfig.from_dict(d)


@dataclass
class RunRecord:
    config: ExperimentConfig
    matrix: AccuracyMatrix
    report: MetricReport | None
    scans: dict[int, PathScan] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    checkpoints: list[str] = field(default_factory=list)
    final_net: Network | None = None
    resumed: bool = False


_ORACLE_CACHE: dict[str, list[float]] = {}


def oracle_accuracies(cfg: ExperimentConfig) -> list[float]:
    """A*_k for k = 1..K from a separately generated copy of the stream."""
    # the oracle never touches the later-task rate, distillation or projection settings
    relevant = dataclasses.replace(cfg.train, lr_later_tasks=1.0, distill_weight=0.0, eps_rel=0.0)
    key = json.dumps([dataclasses.asdict(cfg.stream), dataclasses.asdict(relevant), cfg.widths, cfg.normalization],
                     sort_keys=True, default=list)
    if key not in _ORACLE_CACHE:
        stream = make_stream(cfg.stream)
        _ORACLE_CACHE[key] = [
            joint_oracle(stream, k, cfg.train, cfg.widths, cfg.normalization) for k in range(1, stream.num_tasks + 1)
        ]
    return list(_ORACLE_CACHE[key])


class _Stage:
    def __init__(self, name: str, timings: dict[str, float]):
        self.name, self.timings = name, timings

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = self.timings.get(self.name, 0.0) + time.perf_counter() - self.start
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _evaluate_row(matrix: AccuracyMatrix, net: Network, m: int, tests: Sequence[TaskDataset]) -> None:
    for task in tests:
        matrix.record(m, task.task_id, evaluate(net, task))


def _write_log(path: Path, rows: list[tuple]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "task", "track", "epoch", "loss", "acc"])
        w.writerows(rows)


def _completed(out: Path, cfg: ExperimentConfig) -> bool:
    done = out / "record.json"
    if not done.exists():
        return False
    meta = json.loads(done.read_text())
    return meta.get("complete") and meta.get("config_hash") == cfg.config_hash()


def load_record(directory: str | Path) -> RunRecord:
    out = Path(directory)
    cfg = ExperimentConfig.from_dict(json.loads((out / "config.snapshot").read_text()))
    report, matrix = read_metrics_json(out / "metrics.json")
    meta = json.loads((out / "record.json").read_text())
    from .connector import read_scan_csv

    scans = {int(p.stem.removeprefix("sweep_task")): read_scan_csv(p) for p in sorted(out.glob("sweep_task*.csv"))}
    return RunRecord(cfg, matrix, report, scans, meta.get("timings", {}), meta.get("checkpoints", []), resumed=True)


def run_experiment(
    cfg: ExperimentConfig,
    step_hook: StepHook | None = None,
    on_task_end: Callable[[int, Network], None] | None = None,
) -> RunRecord:
    """Run one configuration end to end.

    ``step_hook`` sees every applied update of the dual-track trainer;
    ``on_task_end(t, net)`` is called once task ``t``'s training split has
    been released.
    """
    out = Path(cfg.output_dir) if cfg.output_dir else None
    if out is not None and _completed(out, cfg):
        log.info("run %s already complete in %s", cfg.run_id, out)
        return load_record(out)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.snapshot").write_text(cfg.canonical_json())
        (out / "FAILED").unlink(missing_ok=True)

    timings: dict[str, float] = {}
    log_rows: list[tuple] = []
    record = RunRecord(cfg, AccuracyMatrix(cfg.stream.num_tasks), None, timings=timings)
    try:
        _run_tasks(cfg, record, out, log_rows, step_hook, on_task_end)
        with _Stage("metrics", timings):
            a_star = oracle_accuracies(cfg) if cfg.joint_oracle else []
            record.report = metric_report(record.matrix, a_star)
    except StageError as err:
        if out is not None:
            write_matrix_csv(record.matrix, out / "matrix.csv")
            _write_log(out / "log.csv", log_rows)
            (out / "FAILED").write_text(f"stage: {err.stage}\nerror: {err.cause!r}\n")
        raise

    if out is not None:
        write_matrix_csv(record.matrix, out / "matrix.csv")
        write_metrics_json(record.report, record.matrix, out / "metrics.json")
        _write_log(out / "log.csv", log_rows)
        (out / "record.json").write_text(
            json.dumps(
                {"complete": True, "config_hash": cfg.config_hash(), "timings": timings,
                 "checkpoints": record.checkpoints},
                indent=2,
            )
        )
    return record


def _run_tasks(cfg, record: RunRecord, out: Path | None, log_rows: list, step_hook, on_task_end) -> None:
    timings = record.timings
    with _Stage("generate", timings):
        pending: deque[TaskDataset] = deque(make_stream(cfg.stream).tasks)
    tests: list[TaskDataset] = []
    covs: list[LayerCovariance] | None = None
    projector: Projector | None = None
    net: Network | None = None
    t = 0
    while pending:
        task = pending.popleft()

        def epoch_log(track, epoch, loss, acc, _t=t):
            log_rows.append((cfg.run_id, _t, track, epoch, loss, acc))

        extra: dict[str, np.ndarray] = {}
        if t == 0:
            with _Stage("train_first_task", timings):
                net = init_network(cfg.widths, task.num_classes, cfg.train.seed, normalization=cfg.normalization)
                net = train_first_task(net, task, cfg.train, log=epoch_log)
        elif cfg.variant == "naive-finetune":
            with _Stage(f"train_task{t}", timings):
                net = train_task_finetune(net, task, cfg.train, log=epoch_log)
        else:
            with _Stage(f"train_task{t}", timings):
                dual = train_task_dual(net, projector, task, cfg.train, step_hook=step_hook, log=epoch_log)
            with _Stage(f"fuse_task{t}", timings):
                net = interpolate(dual.stable_net, dual.plastic_net, cfg.beta_for(t))
            if cfg.sweep_grid:
                with _Stage(f"sweep_task{t}", timings):
                    scan = scan_path(dual.stable_net, dual.plastic_net, cfg.sweep_grid, tests + [task])
                    record.scans[t] = scan
                    if out is not None:
                        write_scan_csv(scan, out / f"sweep_task{t}.csv")
            extra.update(network_to_arrays(dual.stable_net, "stable"))
            extra.update(network_to_arrays(dual.plastic_net, "plastic"))
            del dual

        tests.append(task.without_train())
        record.matrix.mark_trained(t)
        with _Stage("evaluate", timings):
            _evaluate_row(record.matrix, net, t, tests)

        if cfg.variant != "naive-finetune" and pending:
            with _Stage(f"covariance_task{t}", timings):
                covs = merge_all(covs, accumulate_covariance(net, task))
                projector = build_projector(covs, cfg.train.eps_rel)

        if out is not None and cfg.save_checkpoints:
            with _Stage("checkpoint", timings):
                arrays = network_to_arrays(net, "net") | extra
                if covs is not None:
                    arrays |= covariances_to_arrays(covs)
                if projector is not None:
                    arrays |= projector_to_arrays(projector)
                path = out / f"checkpoint_task{t}.npz"
                save_arrays(path, arrays)
                record.checkpoints.append(path.name)

        # release this task's training split before anything else happens
        task = None
        extra = None
        if on_task_end is not None:
            on_task_end(t, net)
        t += 1
    record.final_net = net


def run_sweep(cfg: ExperimentConfig, beta_grid: int) -> list[PathScan]:
    """Connector run that also scans the beta line after every task t >= 2."""
    if cfg.variant != "connector":
        raise PreconditionError("sweeps are defined for the connector variant")
    rec = run_experiment(dataclasses.replace(cfg, sweep_grid=beta_grid))
    return [rec.scans[t] for t in sorted(rec.scans)]


def run_seeds(cfg: ExperimentConfig, seeds: Sequence[int]) -> tuple[list[RunRecord], dict[str, Any]]:
    """Independent runs per seed (own sub-directory) plus mean/std of ACC, BWT and I_K."""
    records = []
    for s in seeds:
        sub = cfg.with_seed(s)
        if cfg.output_dir:
            sub = dataclasses.replace(sub, output_dir=str(Path(cfg.output_dir) / f"seed{s}"), run_id=f"{cfg.run_id}-s{s}")
        records.append(run_experiment(sub))
    summary = summarize(records, seeds)
    if cfg.output_dir:
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        (Path(cfg.output_dir) / "summary.json").write_text(json.dumps(summary, indent=2))
    return records, summary


def summarize(records: Sequence[RunRecord], seeds: Sequence[int]) -> dict[str, Any]:
    def stats(values):
        values = [v for v in values if v is not None]
        if not values:
            return None
        return {"mean": float(np.mean(values)), "std": float(np.std(values)), "values": values}

    return {
        "seeds": list(seeds),
        "acc": stats([r.report.acc for r in records]),
        "bwt": stats([r.report.bwt for r in records]),
        "im_last": stats([r.report.im_per_task[-1] if r.report.im_per_task else None for r in records]),
    }
