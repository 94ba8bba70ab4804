"""
Row/column selection for CUR: WANDA importance scores and DEIM.

Weights are stored ``(d_in, d_out)`` and applied as ``y = x @ W``, so the
per-input-feature activation norms scale the *rows* of ``W``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, MissingActivations, MissingSeed, SingularSubsystem
from .linalg import as_matrix, svd

__all__ = [
    "STRATEGIES",
    "ImportanceMatrix",
    "IndexSelection",
    "wanda_importance",
    "deim_indices",
    "select_indices",
    "top_k",
]

STRATEGIES = ("wanda-deim", "deim-only", "wanda-only", "weight-norm", "random")

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class ImportanceMatrix:
    S: np.ndarray
    strategy: str = "wanda-deim"
    seed: int | None = None


@dataclass(frozen=True)
class IndexSelection:
    p: np.ndarray
    q: np.ndarray

    @property
    def r(self) -> int:
        return len(self.p)


def wanda_importance(W, act_norms) -> ImportanceMatrix:
    """``S[i, j] = act_norms[i] * |W[i, j]|``."""
    W = as_matrix(W, "W")
    act_norms = np.asarray(act_norms, dtype=np.float64)
    if act_norms.shape != (W.shape[0],):
        raise DimensionMismatch(
            f"act_norms has shape {act_norms.shape}, expected ({W.shape[0]},)"
        )
    if np.any(act_norms < 0):
        raise ValueError("act_norms must be non-negative")
    return ImportanceMatrix(S=np.abs(W) * act_norms[:, None])


def deim_indices(V, r: int | None = None) -> np.ndarray:
    """
    DEIM point selection on the leading ``r`` columns of ``V``.

    The first index is the argmax of ``|V[:, 0]|``. Each later column is
    interpolated at the indices chosen so far and the next index is where the
    interpolation residual is largest in magnitude. Ties go to the lowest
    index.

    Raises
    ------
    SingularSubsystem
        If an interpolation subsystem is numerically singular.
    """
    V = as_matrix(V, "V")
    m, k = V.shape
    r = k if r is None else int(r)
    if not 1 <= r <= min(m, k):
        raise DimensionMismatch(f"rank {r} invalid for basis of shape {V.shape}")
    idx = [int(np.argmax(np.abs(V[:, 0])))]
    for j in range(1, r):
        sub = V[idx, :j]
        if np.linalg.cond(sub) > _COND_LIMIT:
            raise SingularSubsystem(f"DEIM subsystem at step {j} is singular")
        c = np.linalg.solve(sub, V[idx, j])
        res = V[:, j] - V[:, :j] @ c
        scale = max(1.0, float(np.max(np.abs(V[:, j]))))
        if np.max(np.abs(res[idx])) >= 1e-10 * scale:
            raise SingularSubsystem("DEIM residual does not vanish at chosen indices")
        res[idx] = 0.0
        if np.max(np.abs(res)) <= 1e-12 * scale:
            raise SingularSubsystem(f"column {j} of the basis is dependent on the previous ones")
        idx.append(int(np.argmax(np.abs(res))))
    return np.array(idx, dtype=np.int64)


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores, ties broken by lowest index."""
    return np.argsort(-np.asarray(scores), kind="stable")[:k].astype(np.int64)


def select_indices(
    W,
    strategy: str,
    r: int,
    act_norms=None,
    seed: int | None = None,
) -> IndexSelection:
    """Pick ``r`` rows and ``r`` columns of ``W`` with the named strategy."""
    W = as_matrix(W, "W")
    m, n = W.shape
    if not 1 <= r <= min(m, n):
        raise DimensionMismatch(f"rank {r} invalid for matrix of shape {W.shape}")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")

    if strategy in ("wanda-deim", "wanda-only"):
        if act_norms is None:
            raise MissingActivations(f"strategy {strategy!r} needs activation norms")
        S = wanda_importance(W, act_norms).S
        if strategy == "wanda-only":
            return IndexSelection(
                p=top_k(np.linalg.norm(S, axis=1), r),
                q=top_k(np.linalg.norm(S, axis=0), r),
            )
        dec = svd(S)
        return IndexSelection(p=deim_indices(dec.P, r), q=deim_indices(dec.Q, r))

    if strategy == "deim-only":
        dec = svd(W)
        return IndexSelection(p=deim_indices(dec.P, r), q=deim_indices(dec.Q, r))

    if strategy == "weight-norm":
        fro = np.linalg.norm(W)
        fro = fro if fro > 0 else 1.0
        return IndexSelection(
            p=top_k(np.linalg.norm(W, axis=1) / fro, r),
            q=top_k(np.linalg.norm(W, axis=0) / fro, r),
        )

    if seed is None:
        raise MissingSeed("strategy 'random' needs a seed")
    rng = np.random.default_rng(seed)
    return IndexSelection(
        p=rng.choice(m, size=r, replace=False).astype(np.int64),
        q=rng.choice(n, size=r, replace=False).astype(np.int64),
    )
