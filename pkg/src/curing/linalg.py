"""
Dense linear-algebra kernels.

Everything here works on 2-D float64 numpy arrays. The SVD is a one-sided
(Hestenes) Jacobi iteration run on the triangular factor of a Householder QR,
with round-robin pair ordering so each sweep is a fixed, vectorised sequence of
disjoint rotations. Results are bit-reproducible for identical input bytes.
"""

from dataclasses import dataclass

from functools import lru_cache

import numpy as np

from .errors import InvalidMatrix, NumericalFailure

__all__ = ["SvdResult", "as_matrix", "svd", "singular_values", "pseudoinverse", "norm", "MAX_SWEEPS"]

MAX_SWEEPS = 100
_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``A = P @ diag(sigma) @ Q.T`` with ``k = min(m, n)``."""

    P: np.ndarray
    sigma: np.ndarray
    Q: np.ndarray

    @property
    def k(self) -> int:
        return self.sigma.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.P * self.sigma) @ self.Q.T


def as_matrix(A, name: str = "matrix") -> np.ndarray:
    """Validate and return ``A`` as a C-contiguous float64 2-D array."""
    arr = np.ascontiguousarray(A, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidMatrix(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidMatrix(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidMatrix(f"{name} contains non-finite entries")
    return arr


@lru_cache(maxsize=None)
def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # circle method; a phantom index n pads odd sizes and is dropped
    size = n + (n % 2)
    players = list(range(size))
    rounds = []
    for _ in range(size - 1):
        left = players[: size // 2]
        right = players[size // 2 :][::-1]
        pairs = [(a, b) for a, b in zip(left, right) if a < n and b < n]
        i = np.array([min(a, b) for a, b in pairs], dtype=np.intp)
        j = np.array([max(a, b) for a, b in pairs], dtype=np.intp)
        rounds.append((i, j))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _jacobi(G: np.ndarray, max_sweeps: int, vectors: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonalise the columns of square ``G``; return (G V, V)."""
    n = G.shape[1]
    # work on the transpose so column pairs are contiguous rows; the first n
    # entries of each row belong to G, the trailing n (if any) to V
    T = np.hstack([G.T, np.eye(n)]) if vectors else G.T.copy()
    tol = n * _EPS
    # columns at rounding-noise level carry no information; rotating them
    # against each other never settles the relative test
    floor = (_EPS * np.linalg.norm(G)) ** 2
    rounds = _round_robin(n) if n > 1 else []
    for _ in range(max_sweeps):
        rotated = False
        for i, j in rounds:
            ti, tj = T[i], T[j]
            gi, gj = ti[:, :n], tj[:, :n]
            alpha = np.einsum("ij,ij->i", gi, gi)
            beta = np.einsum("ij,ij->i", gj, gj)
            gamma = np.einsum("ij,ij->i", gi, gj)
            scale = np.sqrt(alpha * beta)
            act = (np.abs(gamma) > tol * scale) & (np.minimum(alpha, beta) > floor)
            if not act.any():
                continue
            rotated = True
            if not act.all():
                i, j, ti, tj = i[act], j[act], ti[act], tj[act]
                alpha, beta, gamma = alpha[act], beta[act], gamma[act]
            zeta = (beta - alpha) / (2.0 * gamma)
            sgn = np.where(zeta >= 0, 1.0, -1.0)
            t = sgn / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            T[i] = c * ti - s * tj
            T[j] = s * ti + c * tj
        if not rotated:
            G = T[:, :n].T
            return G, (T[:, n:].T if vectors else None)
    raise NumericalFailure(f"Jacobi SVD did not converge in {max_sweeps} sweeps")


def _complete_basis(P: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace columns of P not flagged ``good`` by an orthonormal completion."""
    m = P.shape[0]
    basis = [P[:, c] for c in np.flatnonzero(good)]
    out = P.copy()
    e = 0
    for c in np.flatnonzero(~good):
        while True:
            if e >= m:
                raise NumericalFailure("cannot complete orthonormal basis")
            v = np.zeros(m)
            v[e] = 1.0
            e += 1
            for _ in range(2):
                for b in basis:
                    v -= (b @ v) * b
            nv = np.linalg.norm(v)
            if nv > 0.5:
                v /= nv
                break
        basis.append(v)
        out[:, c] = v
    return out


def svd(A, max_sweeps: int = MAX_SWEEPS) -> SvdResult:
    """
    Thin singular value decomposition.

    Singular values come back in descending order. Each left singular vector
    is signed so that its largest-magnitude entry is positive (first such
    entry on ties) and the matching right vector is flipped with it.

    Raises
    ------
    InvalidMatrix
        Input is empty, not 2-D or has non-finite entries.
    NumericalFailure
        The Jacobi iteration hit ``max_sweeps``.
    """
    A = as_matrix(A)
    m, n = A.shape
    if m < n:
        res = svd(A.T, max_sweeps)
        P, Q = res.Q, res.P
        sigma = res.sigma
    else:
        # unit max-entry scaling keeps squared column norms clear of under/overflow
        amax = float(np.max(np.abs(A)))
        unit = 1.0 if amax == 0 else amax
        Q0, Rt = np.linalg.qr(A / unit, mode="reduced")
        G, V = _jacobi(Rt, max_sweeps)
        sigma = np.sqrt(np.einsum("ij,ij->j", G, G))
        order = np.argsort(-sigma, kind="stable")
        sigma, G, V = sigma[order], G[:, order], V[:, order]
        floor = max(m, n) * _EPS * (sigma[0] if sigma[0] > 0 else 1.0)
        good = sigma > floor
        Ur = np.zeros_like(G)
        Ur[:, good] = G[:, good] / sigma[good]
        if not good.all():
            Ur = _complete_basis(Ur, good)
            sigma = np.where(good, sigma, 0.0)
        P = Q0 @ Ur
        Q = V
        sigma = sigma * unit
    idx = np.argmax(np.abs(P), axis=0)
    flip = np.where(P[idx, np.arange(P.shape[1])] < 0, -1.0, 1.0)
    return SvdResult(P=P * flip, sigma=np.array(sigma), Q=Q * flip)


def singular_values(A, max_sweeps: int = MAX_SWEEPS) -> np.ndarray:
    """Descending singular values only (same iteration as :func:`svd`)."""
    A = as_matrix(A)
    if A.shape[0] < A.shape[1]:
        A = A.T
    amax = float(np.max(np.abs(A)))
    unit = 1.0 if amax == 0 else amax
    Rt = np.linalg.qr(A / unit, mode="r")
    G, _ = _jacobi(Rt, max_sweeps, vectors=False)
    return np.sort(np.sqrt(np.einsum("ij,ij->j", G, G)))[::-1] * unit


def pseudoinverse(A, rcond: float | None = None) -> np.ndarray:
    """
    Moore-Penrose pseudoinverse via :func:`svd`.

    Singular values at or below ``rcond * sigma_max`` are treated as zero.
    The default ``rcond`` is ``max(m, n) * eps``.
    """
    A = as_matrix(A)
    if rcond is None:
        rcond = max(A.shape) * _EPS
    if rcond < 0:
        raise ValueError("rcond must be non-negative")
    res = svd(A)
    cutoff = rcond * (res.sigma[0] if res.k else 0.0)
    keep = res.sigma > cutoff
    inv = np.zeros_like(res.sigma)
    inv[keep] = 1.0 / res.sigma[keep]
    return (res.Q * inv) @ res.P.T


def norm(A, kind: str = "frobenius") -> float:
    """Spectral (largest singular value) or Frobenius norm."""
    A = as_matrix(A)
    if kind == "frobenius":
        amax = float(np.max(np.abs(A)))
        if amax == 0:
            return 0.0
        B = A / amax
        return amax * float(np.sqrt(np.sum(B * B)))
    if kind == "spectral":
        return float(singular_values(A)[0])
    raise ValueError(f"unknown norm kind {kind!r}")
