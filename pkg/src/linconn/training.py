"""Optimisers and the per-task training loops.

``train_task_dual`` runs the stability track (cross-entropy, projected
updates) and the plasticity track (cross-entropy plus feature distillation
towards the frozen previous extractor) in lock-step over one shared
mini-batch sequence.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .errors import PreconditionError
from .model import GradientSet, LossSpec, Network, add_head, backward, extract_features, predict, update_norm_stats
from .nullspace import Projector, project_block
from .taskgen import TaskDataset

# (track, step, applied update) -> None; the update is the delta actually added to the parameters
StepHook = Callable[[str, int, GradientSet], None]
# (track, epoch, mean loss, train accuracy) -> None
EpochLog = Callable[[str, int, float, float], None]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr_first_task: float = 1e-3
    lr_later_tasks: float = 2e-2
    lr_milestones: tuple[int, ...] = (20, 40)
    lr_gamma: float = 0.5
    optimizer: str = "adam"  # "adam" | "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    distill_weight: float = 0.1
    eps_rel: float = 3e-3  # relative eigenvalue cut-off for the approximate null space
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0:
            raise PreconditionError("epochs must be >= 0 and batch_size > 0")
        if self.lr_first_task <= 0 or self.lr_later_tasks <= 0:
            raise PreconditionError("learning rates must be positive")
        if self.distill_weight < 0:
            raise PreconditionError("distill_weight must be >= 0")
        if not 0.0 <= self.eps_rel < 1.0:
            raise PreconditionError("eps_rel must lie in [0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise PreconditionError(f"unknown optimizer {self.optimizer!r}")

    def lr_multiplier(self, epoch: int) -> float:
        return self.lr_gamma ** sum(epoch >= m for m in self.lr_milestones)


@dataclass
class DualTrackResult:
    stable_net: Network
    plastic_net: Network
    stable_losses: list[float] = field(default_factory=list)
    plastic_losses: list[float] = field(default_factory=list)


class Optimizer:
    """Plain SGD or bias-corrected Adam over a network's extractor and heads.

    The step computes the unconstrained parameter delta first; a projector,
    when given, is applied to that delta (so Adam's preconditioning happens
    before projection). Heads absent from the gradient set are left alone.
    """

    def __init__(self, kind: str = "adam", beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if kind not in ("adam", "sgd"):
            raise PreconditionError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.moments: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
        self.steps: dict[tuple, int] = {}

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "Optimizer":
        return cls(cfg.optimizer, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    def _delta(self, key: tuple, g: np.ndarray, lr: float) -> np.ndarray:
        if self.kind == "sgd":
            return -lr * g
        m, v = self.moments.get(key, (np.zeros_like(g), np.zeros_like(g)))
        if m.shape != g.shape:
            raise PreconditionError(f"optimizer state for {key} has shape {m.shape}, gradient {g.shape}")
        m = self.beta1 * m + (1 - self.beta1) * g
        v = self.beta2 * v + (1 - self.beta2) * g * g
        k = self.steps.get(key, 0) + 1
        self.moments[key] = (m, v)
        self.steps[key] = k
        m_hat = m / (1 - self.beta1**k)
        v_hat = v / (1 - self.beta2**k)
        return -lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def step(self, net: Network, grads: GradientSet, lr: float, projector: Projector | None = None) -> GradientSet:
        if len(grads.extractor) != len(net.extractor):
            raise PreconditionError("gradient set does not match the network's extractor")
        if projector is not None and len(projector.matrices) != len(net.extractor):
            raise PreconditionError("projector does not match the network's extractor")
        applied_ext = []
        for i, (layer, (gw, gb)) in enumerate(zip(net.extractor, grads.extractor)):
            dw = self._delta(("ext", i, "w"), gw, lr)
            db = self._delta(("ext", i, "b"), gb, lr)
            if projector is not None:
                dw, db = project_block(projector.matrices[i], dw, db)
            layer.weight += dw
            layer.bias += db
            applied_ext.append((dw, db))
        applied_heads = {}
        for t, (gw, gb) in grads.heads.items():
            head = net.heads[t]
            dw = self._delta(("head", t, "w"), gw, lr)
            db = self._delta(("head", t, "b"), gb, lr)
            head.weight += dw
            head.bias += db
            applied_heads[t] = (dw, db)
        return GradientSet(applied_ext, applied_heads)


def optimizer_step(
    state: Optimizer, params: Network, delta_source: GradientSet, lr: float, projector: Projector | None = None
) -> GradientSet:
    return state.step(params, delta_source, lr, projector)


def batches(n: int, batch_size: int, epoch_rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = epoch_rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _epoch_rng(cfg: TrainConfig, purpose: int, task_id: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed & ((1 << 64) - 1), 2, purpose, task_id, epoch])


def _accuracy(net: Network, x: np.ndarray, y: np.ndarray, task_ids) -> float:
    task_ids = np.broadcast_to(np.asarray(task_ids), (len(y),))
    correct = 0
    for t in np.unique(task_ids):
        rows = task_ids == t
        correct += int(np.sum(predict(net, x[rows], int(t)) == y[rows]))
    return correct / len(y)


def fit(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    task_ids,
    cfg: TrainConfig,
    lr: float,
    epochs: int,
    purpose: int = 0,
    key: int = 0,
    log: EpochLog | None = None,
    track: str = "single",
) -> Network:
    """Plain cross-entropy training of ``net`` in place; ``task_ids`` may be per sample."""
    opt = Optimizer.from_config(cfg)
    task_ids = np.broadcast_to(np.asarray(task_ids, dtype=np.int64), (len(y),))
    for epoch in range(epochs):
        step_lr = lr * cfg.lr_multiplier(epoch)
        losses = []
        for idx in batches(len(y), cfg.batch_size, _epoch_rng(cfg, purpose, key, epoch)):
            update_norm_stats(net, x[idx])
            loss, grads = backward(net, x[idx], y[idx], task_ids[idx])
            opt.step(net, grads, step_lr)
            losses.append(loss)
        if log is not None:
            log(track, epoch, float(np.mean(losses)), _accuracy(net, x, y, task_ids))
    return net


def train_first_task(net: Network, task: TaskDataset, cfg: TrainConfig, log: EpochLog | None = None) -> Network:
    if net.num_heads != 1:
        raise PreconditionError("the first task expects a network with exactly one head")
    if task.train is None:
        raise PreconditionError("task has no training data")
    out = net.copy()
    return fit(out, task.train.inputs, task.local_labels(task.train), 0, cfg, cfg.lr_first_task, cfg.epochs,
               purpose=0, key=task.task_id, log=log, track="first")


def train_task_finetune(prev_net: Network, task: TaskDataset, cfg: TrainConfig, log: EpochLog | None = None) -> Network:
    """Unconstrained cross-entropy fine-tuning on the new task (no projection, no distillation)."""
    if task.train is None:
        raise PreconditionError("task has no training data")
    net = add_head(prev_net.copy(), task.num_classes)
    t = net.num_heads - 1
    return fit(net, task.train.inputs, task.local_labels(task.train), t, cfg, cfg.lr_later_tasks, cfg.epochs,
               purpose=1, key=task.task_id, log=log, track="finetune")


def train_task_dual(
    prev_net: Network,
    projector: Projector,
    task: TaskDataset,
    cfg: TrainConfig,
    step_hook: StepHook | None = None,
    log: EpochLog | None = None,
) -> DualTrackResult:
    """Train the stable and plastic tracks for one task from ``prev_net``."""
    if task.train is None:
        raise PreconditionError("task has no training data")
    if len(projector.matrices) != len(prev_net.extractor) or any(
        m.shape[0] != w + 1 for m, w in zip(projector.matrices, prev_net.widths[:-1])
    ):
        raise PreconditionError("projector dimensions do not match the network")

    stable = add_head(prev_net.copy(), task.num_classes)
    plastic = add_head(prev_net.copy(), task.num_classes)
    # linear connectivity needs both tracks to leave from the same point
    assert all(np.array_equal(a, b) for a, b in zip(stable.arrays(), plastic.arrays()))
    head = stable.num_heads - 1

    x = task.train.inputs
    y = task.local_labels(task.train)
    opt_s = Optimizer.from_config(cfg)
    opt_p = Optimizer.from_config(cfg)
    result = DualTrackResult(stable, plastic)
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr_later_tasks * cfg.lr_multiplier(epoch)
        s_losses, p_losses = [], []
        for idx in batches(len(y), cfg.batch_size, _epoch_rng(cfg, 1, task.task_id, epoch)):
            xb, yb = x[idx], y[idx]

            update_norm_stats(stable, xb)
            loss_s, g_s = backward(stable, xb, yb, head)
            applied = opt_s.step(stable, g_s, lr, projector)
            if step_hook is not None:
                step_hook("stable", step, applied)

            update_norm_stats(plastic, xb)
            spec = LossSpec(distill_weight=cfg.distill_weight,
                            ref_features=extract_features(prev_net, xb) if cfg.distill_weight else None)
            loss_p, g_p = backward(plastic, xb, yb, head, spec)
            applied = opt_p.step(plastic, g_p, lr)
            if step_hook is not None:
                step_hook("plastic", step, applied)

            s_losses.append(loss_s)
            p_losses.append(loss_p)
            step += 1
        result.stable_losses.append(float(np.mean(s_losses)))
        result.plastic_losses.append(float(np.mean(p_losses)))
        if log is not None:
            log("stable", epoch, result.stable_losses[-1], _accuracy(stable, x, y, head))
            log("plastic", epoch, result.plastic_losses[-1], _accuracy(plastic, x, y, head))
    return result
