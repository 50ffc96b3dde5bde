"""Multilayer perceptron with one linear head per task.

Everything is plain numpy in float64. Weights are stored as (out, in) so a
layer computes ``x @ W.T + b``. The forward pass records each layer's input
batch; those feed the covariance accumulator in :mod:`linconn.nullspace`.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import PreconditionError

SEED_MASK = (1 << 64) - 1


@dataclass
class LinearLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    relu: bool = False

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "LinearLayer":
        return LinearLayer(self.weight.copy(), self.bias.copy(), self.relu)


@dataclass
class NormStats:
    """Running mean/variance of each extractor layer's pre-activation.

    Forward passes always normalise with the stored statistics; they change
    only through :func:`update_norm_stats`.
    """

    mean: list[np.ndarray]
    var: list[np.ndarray]
    momentum: float = 0.1
    eps: float = 1e-5

    def copy(self) -> "NormStats":
        return NormStats([m.copy() for m in self.mean], [v.copy() for v in self.var], self.momentum, self.eps)


@dataclass
class Network:
    widths: tuple[int, ...]
    extractor: list[LinearLayer]
    heads: list[LinearLayer]
    seed: int
    norm: NormStats | None = None

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    @property
    def head_sizes(self) -> list[int]:
        return [h.out_dim for h in self.heads]

    def copy(self) -> "Network":
        return Network(
            self.widths,
            [layer.copy() for layer in self.extractor],
            [h.copy() for h in self.heads],
            self.seed,
            None if self.norm is None else self.norm.copy(),
        )

    def arrays(self) -> list[np.ndarray]:
        """Every stored array in a fixed order (parameters, then norm stats)."""
        out = []
        for layer in self.extractor + self.heads:
            out += [layer.weight, layer.bias]
        if self.norm is not None:
            out += self.norm.mean + self.norm.var
        return out

    def parameter_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def same_architecture(self, other: "Network") -> bool:
        return (
            self.widths == other.widths
            and self.head_sizes == other.head_sizes
            and [l.relu for l in self.extractor] == [l.relu for l in other.extractor]
            and (self.norm is None) == (other.norm is None)
        )


@dataclass
class ForwardTrace:
    layer_inputs: list[np.ndarray]  # one per extractor layer, plus the head input
    pre_activations: list[np.ndarray]  # extractor layers only, after normalisation
    features: np.ndarray
    logits: np.ndarray | None


@dataclass
class GradientSet:
    extractor: list[tuple[np.ndarray, np.ndarray]]
    heads: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet(
            [(w * factor, b * factor) for w, b in self.extractor],
            {t: (w * factor, b * factor) for t, (w, b) in self.heads.items()},
        )


@dataclass(frozen=True)
class LossSpec:
    """Mean cross-entropy plus ``distill_weight`` times mean squared feature distance."""

    ce: bool = True
    distill_weight: float = 0.0
    ref_features: np.ndarray | None = None


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed & SEED_MASK, *stream])


def _uniform_layer(rng: np.random.Generator, fan_in: int, fan_out: int, relu: bool) -> LinearLayer:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    weight = rng.uniform(-bound, bound, size=(fan_out, fan_in))
    return LinearLayer(weight, np.zeros(fan_out), relu)


def init_network(
    widths: Sequence[int],
    n_classes: int | None,
    seed: int,
    *,
    normalization: bool = False,
    relu: bool = True,
) -> Network:
    """Build an extractor ``widths[0] -> ... -> widths[-1]`` and, optionally, head 0.

    Initialisation is uniform with bound sqrt(6 / (fan_in + fan_out)), biases
    zero. Head ``t`` always draws from its own stream keyed by ``(seed, t)``.
    """
    widths = tuple(int(w) for w in widths)
    if not widths or any(w <= 0 for w in widths):
        raise PreconditionError(f"layer widths must be positive, got {widths}")
    rng = _rng(seed, 0)
    extractor = [_uniform_layer(rng, a, b, relu) for a, b in zip(widths[:-1], widths[1:])]
    norm = None
    if normalization:
        norm = NormStats([np.zeros(w) for w in widths[1:]], [np.ones(w) for w in widths[1:]])
    net = Network(widths, extractor, [], int(seed), norm)
    if n_classes is not None:
        add_head(net, n_classes)
    return net


def add_head(net: Network, n_classes: int) -> Network:
    """Append a freshly initialised head in place; existing heads are untouched."""
    if n_classes <= 0:
        raise PreconditionError("a head needs at least one class")
    task = net.num_heads
    net.heads.append(_uniform_layer(_rng(net.seed, 1, task), net.feature_dim, n_classes, False))
    return net


def _check_batch(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise PreconditionError(f"batch shape {x.shape} incompatible with input dim {net.input_dim}")
    return x


def _check_task(net: Network, task_id) -> None:
    ids = np.unique(np.atleast_1d(task_id))
    if ids.size and (ids.min() < 0 or ids.max() >= net.num_heads):
        raise PreconditionError(f"unknown task id(s) {ids.tolist()}; network has {net.num_heads} heads")


def _run_extractor(net: Network, x: np.ndarray):
    inputs, pre = [], []
    h = x
    for i, layer in enumerate(net.extractor):
        inputs.append(h)
        z = h @ layer.weight.T + layer.bias
        if net.norm is not None:
            z = (z - net.norm.mean[i]) / np.sqrt(net.norm.var[i] + net.norm.eps)
        pre.append(z)
        h = np.maximum(z, 0.0) if layer.relu else z
    return inputs, pre, h


def forward(net: Network, batch, task_id: int | None) -> ForwardTrace:
    x = _check_batch(net, batch)
    inputs, pre, feats = _run_extractor(net, x)
    logits = None
    if task_id is not None:
        _check_task(net, task_id)
        head = net.heads[int(task_id)]
        logits = feats @ head.weight.T + head.bias
    return ForwardTrace(inputs + [feats], pre, feats, logits)


def extract_features(net: Network, batch) -> np.ndarray:
    return forward(net, batch, None).features


def predict(net: Network, batch, task_id: int) -> np.ndarray:
    """Arg-max class within the task's head; ties go to the lowest index."""
    return np.argmax(forward(net, batch, task_id).logits, axis=1)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_distill(features_new, features_old) -> float:
    features_new = np.asarray(features_new, dtype=np.float64)
    features_old = np.asarray(features_old, dtype=np.float64)
    if features_new.shape != features_old.shape:
        raise PreconditionError(f"feature shapes differ: {features_new.shape} vs {features_old.shape}")
    diff = features_new - features_old
    return float(np.mean(np.sum(diff * diff, axis=1)))


def backward(net: Network, batch, labels, task_id, loss: LossSpec = LossSpec()):
    """Loss value and exact gradients, mean-reduced over the batch.

    ``task_id`` may be a single head index or one index per sample (mixed-task
    batches, as in joint training); labels are local to each sample's head.
    """
    x = _check_batch(net, batch)
    labels = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if labels.shape != (n,):
        raise PreconditionError("need exactly one label per sample")
    task_ids = np.broadcast_to(np.asarray(task_id, dtype=np.int64), (n,))
    _check_task(net, task_ids)
    if loss.distill_weight and loss.ref_features is None:
        raise PreconditionError("distillation requested without reference features")

    inputs, pre, feats = _run_extractor(net, x)
    total = 0.0
    d_feats = np.zeros_like(feats)
    head_grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    if loss.ce:
        for t in np.unique(task_ids):
            rows = np.flatnonzero(task_ids == t)
            head = net.heads[int(t)]
            y = labels[rows]
            if y.size and (y.min() < 0 or y.max() >= head.out_dim):
                raise PreconditionError(f"labels outside head {t}'s {head.out_dim} classes")
            f = feats[rows]
            logp = log_softmax(f @ head.weight.T + head.bias)
            total -= logp[np.arange(rows.size), y].sum() / n
            d_logits = np.exp(logp)
            d_logits[np.arange(rows.size), y] -= 1.0
            d_logits /= n
            head_grads[int(t)] = (d_logits.T @ f, d_logits.sum(axis=0))
            d_feats[rows] += d_logits @ head.weight

    if loss.distill_weight:
        ref = np.asarray(loss.ref_features, dtype=np.float64)
        if ref.shape != feats.shape:
            raise PreconditionError(f"reference features shape {ref.shape} != {feats.shape}")
        diff = feats - ref
        total += loss.distill_weight * float(np.mean(np.sum(diff * diff, axis=1)))
        d_feats += (2.0 * loss.distill_weight / n) * diff

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.extractor)  # type: ignore[list-item]
    delta = d_feats
    for i in range(len(net.extractor) - 1, -1, -1):
        layer = net.extractor[i]
        if layer.relu:
            delta = delta * (pre[i] > 0.0)
        if net.norm is not None:
            delta = delta / np.sqrt(net.norm.var[i] + net.norm.eps)
        grads[i] = (delta.T @ inputs[i], delta.sum(axis=0))
        delta = delta @ layer.weight
    return float(total), GradientSet(grads, head_grads)


def update_norm_stats(net: Network, batch) -> None:
    """Training-mode update of running normalisation statistics (in place)."""
    if net.norm is None:
        return
    x = _check_batch(net, batch)
    h = x
    m = net.norm.momentum
    for i, layer in enumerate(net.extractor):
        z = h @ layer.weight.T + layer.bias
        mu, var = z.mean(axis=0), z.var(axis=0)
        net.norm.mean[i] = (1 - m) * net.norm.mean[i] + m * mu
        net.norm.var[i] = (1 - m) * net.norm.var[i] + m * var
        z = (z - net.norm.mean[i]) / np.sqrt(net.norm.var[i] + net.norm.eps)
        h = np.maximum(z, 0.0) if layer.relu else z


def map_arrays(fn: Callable[..., np.ndarray], *nets: Network) -> Network:
    """New network whose every array is ``fn`` of the corresponding arrays of ``nets``."""
    first = nets[0]
    for other in nets[1:]:
        if not first.same_architecture(other):
            raise PreconditionError("networks have different architectures")
    out = first.copy()
    for dst, *srcs in zip(out.arrays(), *(n.arrays() for n in nets)):
        dst[...] = fn(*srcs)
    return out


# -- serialisation -----------------------------------------------------------

def network_to_arrays(net: Network, prefix: str = "net") -> dict[str, np.ndarray]:
    meta = {
        "widths": list(net.widths),
        "head_sizes": net.head_sizes,
        "relu": [l.relu for l in net.extractor],
        "seed": net.seed,
        "norm": None if net.norm is None else {"momentum": net.norm.momentum, "eps": net.norm.eps},
    }
    out = {f"{prefix}/meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for i, layer in enumerate(net.extractor):
        out[f"{prefix}/extractor{i}/weight"] = layer.weight
        out[f"{prefix}/extractor{i}/bias"] = layer.bias
    for i, head in enumerate(net.heads):
        out[f"{prefix}/head{i}/weight"] = head.weight
        out[f"{prefix}/head{i}/bias"] = head.bias
    if net.norm is not None:
        for i, (mu, var) in enumerate(zip(net.norm.mean, net.norm.var)):
            out[f"{prefix}/norm{i}/mean"] = mu
            out[f"{prefix}/norm{i}/var"] = var
    return out


def network_from_arrays(arrays, prefix: str = "net") -> Network:
    meta = json.loads(bytes(arrays[f"{prefix}/meta"]).decode())
    extractor = [
        LinearLayer(arrays[f"{prefix}/extractor{i}/weight"].copy(), arrays[f"{prefix}/extractor{i}/bias"].copy(), r)
        for i, r in enumerate(meta["relu"])
    ]
    heads = [
        LinearLayer(arrays[f"{prefix}/head{i}/weight"].copy(), arrays[f"{prefix}/head{i}/bias"].copy(), False)
        for i in range(len(meta["head_sizes"]))
    ]
    norm = None
    if meta["norm"] is not None:
        k = len(extractor)
        norm = NormStats(
            [arrays[f"{prefix}/norm{i}/mean"].copy() for i in range(k)],
            [arrays[f"{prefix}/norm{i}/var"].copy() for i in range(k)],
            meta["norm"]["momentum"],
            meta["norm"]["eps"],
        )
    return Network(tuple(meta["widths"]), extractor, heads, meta["seed"], norm)


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    with np.load(Path(path), allow_pickle=False) as data:
        return {k: data[k] for k in data.files}


def save_network(net: Network, path: str | Path) -> None:
    save_arrays(path, network_to_arrays(net))


def load_network(path: str | Path) -> Network:
    return network_from_arrays(load_arrays(path))
