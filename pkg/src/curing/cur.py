"""
CUR factorisation of a single weight matrix.

``W ~ C @ U @ R`` where ``C = W[:, q]``, ``R = W[p, :]`` and the core is
split as ``U = U0 + dU`` with ``U0 = pinv(C) @ W @ pinv(R)`` frozen and ``dU``
the only part healing may train.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, RankExceedsSpectrum
from .linalg import SvdResult, as_matrix, norm, pseudoinverse, svd
from .selection import IndexSelection, select_indices

__all__ = [
    "CurFactors",
    "BoundReport",
    "ParamCount",
    "select_rank",
    "param_count",
    "compute_core",
    "cur_decompose",
    "error_bound_check",
    "eta_limits",
]


@dataclass
class CurFactors:
    C: np.ndarray
    U0: np.ndarray
    dU: np.ndarray
    R: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        r = len(self.p)
        if len(self.q) != r:
            raise DimensionMismatch("p and q must have equal length")
        shapes = {
            "C": (self.C.shape[1],),
            "U0": self.U0.shape,
            "dU": self.dU.shape,
            "R": (self.R.shape[0],),
        }
        expected = {"C": (r,), "U0": (r, r), "dU": (r, r), "R": (r,)}
        if shapes != expected:
            raise DimensionMismatch(f"inconsistent factor shapes {shapes} for rank {r}")

    @property
    def r(self) -> int:
        return len(self.p)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.C.shape[0], self.R.shape[1])

    @property
    def core(self) -> np.ndarray:
        return self.U0 + self.dU

    @property
    def n_params(self) -> int:
        m, n = self.shape
        return m * self.r + self.r * self.r + self.r * n

    def reconstruct(self) -> np.ndarray:
        return self.C @ self.core @ self.R

    def apply(self, x: np.ndarray) -> np.ndarray:
        """``x @ C @ U @ R`` as three thin products."""
        return ((x @ self.C) @ self.core) @ self.R

    def copy(self) -> "CurFactors":
        return CurFactors(
            C=self.C.copy(), U0=self.U0.copy(), dU=self.dU.copy(), R=self.R.copy(),
            p=self.p.copy(), q=self.q.copy(),
        )


@dataclass(frozen=True)
class BoundReport:
    """One evaluation of ``||W - CUR||_2 <= (eta_p + eta_q) * sigma_{r+1}``."""

    lhs: float
    sigma_next: float
    eta_p: float
    eta_q: float
    rhs: float
    holds: bool
    vector_source: str = "W"
    r: int = 0

    def as_dict(self) -> dict:
        return {
            "lhs": self.lhs, "sigma_next": self.sigma_next, "eta_p": self.eta_p,
            "eta_q": self.eta_q, "rhs": self.rhs, "holds": self.holds,
            "vector_source": self.vector_source, "r": self.r,
        }


@dataclass(frozen=True)
class ParamCount:
    original: int
    compressed: int
    saved: int = field(init=False)
    reduces: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "saved", self.original - self.compressed)
        object.__setattr__(self, "reduces", self.original > self.compressed)


def select_rank(m: int, n: int, r_max: int | None = None) -> int:
    """
    Largest power of two below the break-even rank of ``m*n = m*r + r*r + r*n``,
    capped at ``r_max`` (``None`` means no cap).
    """
    if m < 1 or n < 1:
        raise ValueError("matrix dimensions must be positive")
    arg = (math.sqrt(m * m + 6 * m * n + n * n) - (m + n)) / 2
    r = 1 if arg < 1 else 2 ** int(math.floor(math.log2(arg)))
    if r_max is not None:
        if r_max < 1:
            raise ValueError("r_max must be >= 1")
        r = min(r, r_max)
    return r


def param_count(m: int, n: int, r: int) -> ParamCount:
    if r > min(m, n):
        raise DimensionMismatch(f"rank {r} exceeds min({m}, {n})")
    return ParamCount(original=m * n, compressed=m * r + r * r + r * n)


def compute_core(W, C, R) -> np.ndarray:
    """Frobenius-optimal core ``pinv(C) @ W @ pinv(R)``."""
    W, C, R = as_matrix(W, "W"), as_matrix(C, "C"), as_matrix(R, "R")
    if C.shape[0] != W.shape[0] or R.shape[1] != W.shape[1]:
        raise DimensionMismatch(f"C {C.shape} / R {R.shape} do not conform with W {W.shape}")
    return pseudoinverse(C) @ W @ pseudoinverse(R)


def factors_from_selection(W, sel: IndexSelection) -> CurFactors:
    W = as_matrix(W, "W")
    C = W[:, sel.q].copy()
    R = W[sel.p, :].copy()
    U0 = compute_core(W, C, R)
    return CurFactors(C=C, U0=U0, dU=np.zeros_like(U0), R=R,
                      p=np.asarray(sel.p, dtype=np.int64), q=np.asarray(sel.q, dtype=np.int64))


def cur_decompose(W, r: int, strategy: str = "wanda-deim", act_norms=None,
                  seed: int | None = None) -> CurFactors:
    sel = select_indices(W, strategy, r, act_norms=act_norms, seed=seed)
    return factors_from_selection(W, sel)


# absolute slack for exactly rank-deficient W, where rhs is 0 but lhs is rounding noise
_ROUNDING = 1e-12


def eta_limits(m: int, n: int, r: int) -> tuple[float, float]:
    """A-priori DEIM ceilings ``sqrt(m r / 3) 2^r`` and ``sqrt(n r / 3) 2^r``."""
    return math.sqrt(m * r / 3) * 2.0**r, math.sqrt(n * r / 3) * 2.0**r


def error_bound_check(W, f: CurFactors, vector_source: str = "W", S=None,
                      w_svd: SvdResult | None = None) -> BoundReport:
    """
    Evaluate both sides of the DEIM-CUR spectral error bound for ``f``.

    ``vector_source`` picks whose singular vectors define the eta constants:
    ``"W"`` (the setting in which the bound is a theorem) or ``"S"``, an
    importance matrix such as the WANDA scores, in which case the result is
    only an empirical measurement. ``w_svd`` may carry a precomputed
    :func:`svd` of ``W`` to skip recomputing it.

    When ``r == min(m, n)`` there is no neglected singular value; the report
    then has ``rhs = 0`` and ``holds`` tests ``lhs <= 1e-8``.
    """
    W = as_matrix(W, "W")
    m, n = W.shape
    r = f.r
    if r > min(m, n):
        raise RankExceedsSpectrum(f"rank {r} exceeds min({m}, {n})")
    if vector_source == "W":
        src = W
    elif vector_source == "S":
        if S is None:
            raise ValueError("vector_source 'S' needs the importance matrix S")
        src = as_matrix(S.S if hasattr(S, "S") else S, "S")
        if src.shape != W.shape:
            raise DimensionMismatch("S must have the shape of W")
    else:
        raise ValueError(f"unknown vector_source {vector_source!r}")

    dec_w = svd(W) if w_svd is None else w_svd
    dec_v = dec_w if src is W else svd(src)
    lhs = norm(W - f.reconstruct(), "spectral")
    Pp = dec_v.P[f.p, :r]
    Qq = dec_v.Q[f.q, :r]
    sp = svd(Pp).sigma[-1]
    sq = svd(Qq).sigma[-1]
    eta_p = float(1.0 / sp) if sp > 0 else math.inf
    eta_q = float(1.0 / sq) if sq > 0 else math.inf
    if r == min(m, n):
        return BoundReport(lhs=lhs, sigma_next=0.0, eta_p=eta_p, eta_q=eta_q, rhs=0.0,
                           holds=lhs <= 1e-8, vector_source=vector_source, r=r)
    sigma_next = float(dec_w.sigma[r])
    rhs = (eta_p + eta_q) * sigma_next
    return BoundReport(lhs=lhs, sigma_next=sigma_next, eta_p=eta_p, eta_q=eta_q, rhs=rhs,
                       holds=lhs <= rhs + 1e-8 * rhs + _ROUNDING * float(dec_w.sigma[0]),
                       vector_source=vector_source, r=r)
