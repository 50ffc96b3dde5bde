"""Dense float64 linear algebra: symmetric eigendecomposition and checked matmul.

The eigensolver is a cyclic Jacobi iteration using the round-robin (Brent-Luk)
pair ordering, so each round rotates n/2 disjoint index pairs at once and the
row/column updates vectorise in numpy.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import NumericalError, PreconditionError

MAX_SWEEPS = 100
OFF_TOL = 1e-12
SYM_TOL = 1e-9


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # column i pairs with eigenvalues[i]

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def as_dense(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise PreconditionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise PreconditionError(f"{name} has non-finite entries")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_dense(a, "a")
    b = as_dense(b, "b")
    if a.shape[1] != b.shape[0]:
        raise PreconditionError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericalError("matrix product overflowed")
    return out


@lru_cache(maxsize=128)
def _round_robin(m: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Pairings for m (even) players: m-1 rounds, each a perfect matching."""
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p = np.array([min(players[i], players[m - 1 - i]) for i in range(m // 2)])
        q = np.array([max(players[i], players[m - 1 - i]) for i in range(m // 2)])
        rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _fix_signs(v: np.ndarray) -> np.ndarray:
    # first component with non-negligible magnitude made positive
    mag = np.abs(v)
    first = np.argmax(mag > 1e-12 * mag.max(axis=0, keepdims=True), axis=0)
    signs = np.sign(v[first, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def sym_eig(a, max_sweeps: int = MAX_SWEEPS, tol: float = OFF_TOL) -> EigenDecomposition:
    """Eigendecomposition of a real symmetric matrix.

    Eigenvalues come back in non-increasing order; each eigenvector has its
    first non-negligible component positive, so output is a deterministic
    function of the input bits.
    """
    a = as_dense(a, "a")
    n, m = a.shape
    if n != m:
        raise PreconditionError(f"sym_eig needs a square matrix, got {a.shape}")
    scale = np.linalg.norm(a)
    if n and np.linalg.norm(a - a.T) > SYM_TOL * max(scale, 1.0):
        raise PreconditionError("sym_eig needs a symmetric matrix")
    if n == 0:
        return EigenDecomposition(np.zeros(0), np.zeros((0, 0)))

    size = n + (n % 2)  # pad odd sizes with a decoupled zero row/column
    work = np.zeros((size, size))
    work[:n, :n] = 0.5 * (a + a.T)
    vecs = np.eye(size)
    target = tol * scale

    converged = scale == 0.0
    for _ in range(max_sweeps):
        if converged:
            break
        for p, q in _round_robin(size):
            apq = work[p, q]
            active = apq != 0.0
            if not active.any():
                continue
            with np.errstate(over="ignore", divide="ignore"):
                theta = (work[q, q] - work[p, p]) / (2.0 * np.where(active, apq, 1.0))
            t = np.where(theta >= 0.0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rot = np.eye(size)
            rot[p, p] = c
            rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            work = rot.T @ work @ rot
            work[p, q] = 0.0
            work[q, p] = 0.0
            vecs = vecs @ rot
        off = np.linalg.norm(work - np.diag(np.diag(work)))
        converged = off <= target
    if not converged:
        raise NumericalError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")

    vals = np.diag(work)[:n].copy()
    vecs = vecs[:n, :n]
    order = np.argsort(-vals, kind="stable")
    return EigenDecomposition(vals[order], _fix_signs(vecs[:, order]))
