"""Dense vector helpers, rank-1 / rank-k retain projectors and coupling diagnostics.

Vectors are plain 1-D ``float64`` numpy arrays.  Constructors validate
shape and finiteness; everything else is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateGradientError,
    DimensionError,
    EmptyBasisError,
    InvalidVectorError,
    UnsupportedDimensionError,
)

#: Largest dimension for which dense Hessians / operator norms are materialized.
MAX_DENSE_DIM = 256


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Return ``x`` as a read-only 1-D float64 array, rejecting NaN/Inf and empty input."""
    arr = np.array(x, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidVectorError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidVectorError(f"{name} must have dim >= 1")
    if not np.all(np.isfinite(arr)):
        raise InvalidVectorError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


def dot(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_dim(a, b)
    return float(a @ b)


def norm(x) -> float:
    return float(np.linalg.norm(x))


def cosine_coupling(g_f, g_r) -> float:
    """Cosine of the angle between forget and retain gradients, clamped to [-1, 1]."""
    g_f = np.asarray(g_f, dtype=np.float64)
    g_r = np.asarray(g_r, dtype=np.float64)
    _check_same_dim(g_f, g_r)
    nf, nr = norm(g_f), norm(g_r)
    if nf == 0.0 or nr == 0.0:
        raise DegenerateGradientError("cosine coupling undefined for a zero gradient")
    return float(np.clip((g_f @ g_r) / (nf * nr), -1.0, 1.0))


@dataclass(frozen=True)
class Rank1Projector:
    """``P^(tau) = g g^T / (|g|^2 + tau)``; ``tau = 0`` gives the orthogonal projector onto ``g``."""

    direction: np.ndarray
    tau: float = 0.0
    norm_sq: float = field(init=False)
    denom: float = field(init=False)

    def __post_init__(self):
        d = as_vector(self.direction, "direction")
        if self.tau < 0 or not np.isfinite(self.tau):
            raise ValueError(f"tau must be finite and >= 0, got {self.tau}")
        n2 = float(d @ d)
        if n2 == 0.0:
            raise DegenerateGradientError("projector direction is zero")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "norm_sq", n2)
        object.__setattr__(self, "denom", n2 + float(self.tau))

    @property
    def dim(self) -> int:
        return self.direction.shape[0]

    def coefficient(self, x) -> float:
        """``(x . g) / (|g|^2 + tau)``."""
        x = np.asarray(x, dtype=np.float64)
        _check_same_dim(x, self.direction)
        return float(x @ self.direction) / self.denom

    def apply(self, x) -> np.ndarray:
        return self.coefficient(x) * self.direction

    def matrix(self) -> np.ndarray:
        if self.dim > MAX_DENSE_DIM:
            raise UnsupportedDimensionError(f"dense projector limited to dim <= {MAX_DENSE_DIM}")
        return np.outer(self.direction, self.direction) / self.denom


def project_out(projector: Rank1Projector, x) -> np.ndarray:
    """``x - (x . g)/(|g|^2 + tau) g``."""
    x = np.asarray(x, dtype=np.float64)
    return x - projector.apply(x)


def regproj_gap(projector: Rank1Projector) -> float:
    """Operator-norm distance between the regularized and exact projectors, ``tau/(|g|^2+tau)``."""
    return float(projector.tau) / projector.denom


@dataclass(frozen=True)
class OrthonormalBasis:
    columns: np.ndarray  # shape (dim, rank)
    drop_tol: float = 1e-10

    def __post_init__(self):
        cols = np.array(self.columns, dtype=np.float64)
        if cols.ndim != 2 or cols.shape[1] == 0:
            raise EmptyBasisError("basis needs at least one column")
        cols.setflags(write=False)
        object.__setattr__(self, "columns", cols)

    @property
    def rank(self) -> int:
        return self.columns.shape[1]

    @property
    def dim(self) -> int:
        return self.columns.shape[0]

    def column(self, j: int) -> np.ndarray:
        return self.columns[:, j]


def orthonormalize(vectors, drop_tol: float = 1e-10) -> OrthonormalBasis:
    """Two-pass modified Gram-Schmidt.

    An input is dropped when its residual after projection is below
    ``drop_tol`` times its original norm (zero inputs are always dropped).
    """
    vecs = [np.asarray(v, dtype=np.float64) for v in vectors]
    if not vecs:
        raise EmptyBasisError("no input vectors")
    dim = vecs[0].shape[0]
    for v in vecs:
        if v.shape != (dim,):
            raise DimensionError("all input vectors must share one dimension")
    kept: list[np.ndarray] = []
    for v in vecs:
        original = norm(v)
        if original == 0.0:
            continue
        r = v.copy()
        for _ in range(2):
            for u in kept:
                r -= (u @ r) * u
        rn = norm(r)
        if rn < drop_tol * original:
            continue
        kept.append(r / rn)
    if not kept:
        raise EmptyBasisError("all inputs were numerically dependent or zero")
    return OrthonormalBasis(np.stack(kept, axis=1), drop_tol=drop_tol)


def subspace_project_out(basis: OrthonormalBasis, x) -> np.ndarray:
    """``x - U U^T x``, applied column by column (MGS order) for accuracy."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (basis.dim,):
        raise DimensionError(f"dimension mismatch: basis dim {basis.dim} vs {x.shape}")
    r = x.copy()
    for j in range(basis.rank):
        u = basis.columns[:, j]
        r -= (u @ r) * u
    return r


def power_iteration(matvec, dim: int, *, seed: int = 0, maxiter: int = 20000,
                    tol: float = 1e-10) -> float:
    """Largest eigenvalue of a symmetric PSD operator given as ``matvec``.

    Stops once the eigen-residual ``|A v - lam v|`` falls below ``tol * lam``;
    the Rayleigh quotient error is then quadratic in that residual.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= norm(v)
    lam = 0.0
    for _ in range(maxiter):
        w = matvec(v)
        lam = float(v @ w)
        wn = norm(w)
        if wn == 0.0:
            return 0.0
        if norm(w - lam * v) <= tol * abs(lam):
            break
        v = w / wn
    return lam


def operator_norm(matrix, *, seed: int = 0, maxiter: int = 20000, tol: float = 1e-10) -> float:
    """Spectral norm of a dense matrix via power iteration on ``M^T M``."""
    m = np.asarray(matrix, dtype=np.float64)
    if max(m.shape) > MAX_DENSE_DIM:
        raise UnsupportedDimensionError(f"dense operator norm limited to dim <= {MAX_DENSE_DIM}")
    gram = m.T @ m
    return float(np.sqrt(power_iteration(lambda v: gram @ v, m.shape[1], seed=seed,
                                         maxiter=maxiter, tol=tol)))


def lambda_max(matrix, *, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    a = np.asarray(matrix, dtype=np.float64)
    return power_iteration(lambda v: a @ v, a.shape[0], seed=seed)
