"""Per-layer uncentered input covariances and the null-space projectors built from them.

Every extractor layer input is augmented with a constant 1 so the projector
acts on the ``[W | b]`` block and bias updates are constrained too.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError
from .model import GradientSet, Network, forward
from .numerics import sym_eig
from .taskgen import TaskDataset

DEFAULT_EPS_REL = 3e-3


@dataclass(frozen=True)
class LayerCovariance:
    layer_id: int
    cov: np.ndarray
    n: int

    @property
    def dim(self) -> int:
        return self.cov.shape[0]

    @classmethod
    def empty(cls, layer_id: int, dim: int) -> "LayerCovariance":
        return cls(layer_id, np.zeros((dim, dim)), 0)


@dataclass(frozen=True)
class Projector:
    matrices: tuple[np.ndarray, ...]
    retained_dims: tuple[int, ...]
    threshold_used: float
    # covariance restricted to its above-threshold eigenvectors, per layer
    range_covs: tuple[np.ndarray, ...]


def augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def accumulate_covariance(net: Network, dataset: TaskDataset, batch_size: int = 512) -> list[LayerCovariance]:
    """(1/n) sum of augmented layer-input outer products over the task's training set."""
    if dataset.train is None or len(dataset.train) == 0:
        raise PreconditionError(f"task {dataset.task_id} has no training data to accumulate")
    x = dataset.train.inputs
    n = x.shape[0]
    sums = [np.zeros((w + 1, w + 1)) for w in net.widths[:-1]]
    for start in range(0, n, batch_size):
        trace = forward(net, x[start : start + batch_size], None)
        for i, acc in enumerate(sums):
            xa = augment(trace.layer_inputs[i])
            acc += xa.T @ xa
    return [LayerCovariance(i, s / n, n) for i, s in enumerate(sums)]


def merge_covariance(prev: LayerCovariance, new: LayerCovariance) -> LayerCovariance:
    if prev.layer_id != new.layer_id or prev.dim != new.dim:
        raise PreconditionError(
            f"cannot merge layer {prev.layer_id} ({prev.dim}) with layer {new.layer_id} ({new.dim})"
        )
    if prev.n == 0:
        return new
    if new.n == 0:
        return prev
    total = prev.n + new.n
    return LayerCovariance(prev.layer_id, (prev.n * prev.cov + new.n * new.cov) / total, total)


def merge_all(prev: list[LayerCovariance] | None, new: list[LayerCovariance]) -> list[LayerCovariance]:
    if prev is None:
        return list(new)
    if len(prev) != len(new):
        raise PreconditionError("covariance lists cover different layers")
    return [merge_covariance(a, b) for a, b in zip(prev, new)]


def build_projector(covs: list[LayerCovariance], eps_rel: float = DEFAULT_EPS_REL) -> Projector:
    """P = U U^T with U the eigenvectors whose eigenvalue is at most eps_rel * lambda_max."""
    if not 0.0 <= eps_rel < 1.0:
        raise PreconditionError(f"eps_rel must lie in [0, 1), got {eps_rel}")
    mats, dims, ranges = [], [], []
    for c in covs:
        eig = sym_eig(c.cov)
        lam_max = eig.eigenvalues[0] if eig.eigenvalues.size else 0.0
        if lam_max <= 0.0:
            null = np.ones(c.dim, dtype=bool)
        else:
            null = eig.eigenvalues <= eps_rel * lam_max
        u = eig.eigenvectors[:, null]
        r = eig.eigenvectors[:, ~null]
        mats.append(u @ u.T)
        dims.append(int(null.sum()))
        ranges.append((r * eig.eigenvalues[~null]) @ r.T)
    return Projector(tuple(mats), tuple(dims), float(eps_rel), tuple(ranges))


def identity_projector(net: Network) -> Projector:
    dims = [w + 1 for w in net.widths[:-1]]
    return Projector(tuple(np.eye(d) for d in dims), tuple(dims), 0.0, tuple(np.zeros((d, d)) for d in dims))


def zero_projector(net: Network) -> Projector:
    dims = [w + 1 for w in net.widths[:-1]]
    return Projector(tuple(np.zeros((d, d)) for d in dims), (0,) * len(dims), 0.0, tuple(np.eye(d) for d in dims))


def project_block(p: np.ndarray, dw: np.ndarray, db: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    block = np.hstack([dw, db[:, None]]) @ p
    return block[:, :-1], block[:, -1]


def project_update(p: Projector, grads: GradientSet) -> GradientSet:
    """Right-multiply each extractor layer's ``[dW | db]`` by its projector; heads pass through."""
    if len(p.matrices) != len(grads.extractor):
        raise PreconditionError(f"projector has {len(p.matrices)} layers, update has {len(grads.extractor)}")
    out = []
    for mat, (dw, db) in zip(p.matrices, grads.extractor):
        if mat.shape[0] != dw.shape[1] + 1:
            raise PreconditionError(f"projector of size {mat.shape[0]} cannot act on {dw.shape}")
        out.append(project_block(mat, dw, db))
    return GradientSet(out, dict(grads.heads))


def nullity_ratio(range_cov: np.ndarray, dw: np.ndarray, db: np.ndarray) -> float:
    """||X_range [dW | db]^T||_F / ||[dW | db]||_F (0 for a zero update)."""
    block = np.hstack([dw, db[:, None]])
    norm = np.linalg.norm(block)
    return 0.0 if norm == 0.0 else float(np.linalg.norm(range_cov @ block.T) / norm)


# -- serialisation -----------------------------------------------------------

def covariances_to_arrays(covs: list[LayerCovariance], prefix: str = "cov") -> dict[str, np.ndarray]:
    out = {}
    for c in covs:
        out[f"{prefix}{c.layer_id}/matrix"] = c.cov
        out[f"{prefix}{c.layer_id}/n"] = np.array(c.n, dtype=np.int64)
    return out


def covariances_from_arrays(arrays, prefix: str = "cov") -> list[LayerCovariance]:
    covs = []
    i = 0
    while f"{prefix}{i}/matrix" in arrays:
        covs.append(LayerCovariance(i, arrays[f"{prefix}{i}/matrix"].copy(), int(arrays[f"{prefix}{i}/n"])))
        i += 1
    return covs


def projector_to_arrays(p: Projector, prefix: str = "proj") -> dict[str, np.ndarray]:
    out = {f"{prefix}/threshold": np.array(p.threshold_used)}
    for i, (m, r) in enumerate(zip(p.matrices, p.range_covs)):
        out[f"{prefix}{i}/matrix"] = m
        out[f"{prefix}{i}/range"] = r
        out[f"{prefix}{i}/retained"] = np.array(p.retained_dims[i], dtype=np.int64)
    return out


def projector_from_arrays(arrays, prefix: str = "proj") -> Projector:
    mats, ranges, dims = [], [], []
    i = 0
    while f"{prefix}{i}/matrix" in arrays:
        mats.append(arrays[f"{prefix}{i}/matrix"].copy())
        ranges.append(arrays[f"{prefix}{i}/range"].copy())
        dims.append(int(arrays[f"{prefix}{i}/retained"]))
        i += 1
    return Projector(tuple(mats), tuple(dims), float(arrays[f"{prefix}/threshold"]), tuple(ranges))
