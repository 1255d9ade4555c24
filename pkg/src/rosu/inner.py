"""Inner perturbations: standard, retain-orthogonal, protected-subspace, and a sampling oracle."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateGradientError, InvalidBranchError
from .linalg import (
    OrthonormalBasis,
    Rank1Projector,
    as_vector,
    norm,
    project_out,
    subspace_project_out,
)

DEFAULT_TAU = 1e-8
DEFAULT_EPS_Q = 1e-6


class Branch(str, enum.Enum):
    ROSU = "Rosu"
    FALLBACK = "DegenerateFallback"
    STANDARD = "Standard"
    SUBSPACE = "Subspace"


@dataclass(frozen=True)
class PerturbationConfig:
    rho: float
    tau: float = DEFAULT_TAU
    eps_q: float = DEFAULT_EPS_Q
    beta: float = 0.0
    eta: float = 0.1

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if not self.eps_q > 0:
            raise ValueError(f"eps_q must be > 0, got {self.eps_q}")
        if not self.tau >= 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")


@dataclass(frozen=True)
class InnerSolution:
    """Result of an inner maximization.

    ``delta`` and ``unit_dir`` are ``None`` on the fallback branch; the caller
    is expected to take a retain-descent step instead.  ``alpha`` is
    ``rho / q_norm`` on the Rosu/Subspace branches and ``nan`` otherwise.
    """

    delta: np.ndarray | None
    branch: Branch
    q_norm: float
    alpha: float
    unit_dir: np.ndarray | None
    projected: np.ndarray | None = None  # q_tau, q_U, or g_f for the standard branch

    @property
    def is_fallback(self) -> bool:
        return self.branch is Branch.FALLBACK


def standard_perturbation(g_f, cfg: PerturbationConfig) -> InnerSolution:
    """``rho * g_f / |g_f|``."""
    g_f = as_vector(g_f, "g_f")
    nf = norm(g_f)
    if nf == 0.0:
        raise DegenerateGradientError("standard perturbation needs a nonzero forget gradient")
    u = g_f / nf
    return InnerSolution(cfg.rho * u, Branch.STANDARD, nf, cfg.rho / nf, u, g_f)


def rosu_perturbation(g_f, g_r, cfg: PerturbationConfig) -> InnerSolution:
    g_f = as_vector(g_f, "g_f")
    g_r = as_vector(g_r, "g_r")
    if norm(g_r) == 0.0:
        raise DegenerateGradientError("retain gradient is zero; retain-neutrality is undefined")
    q = project_out(Rank1Projector(g_r, cfg.tau), g_f)
    qn = norm(q)
    if qn <= cfg.eps_q:
        return InnerSolution(None, Branch.FALLBACK, qn, float("nan"), None, q)
    u = q / qn
    return InnerSolution(cfg.rho * u, Branch.ROSU, qn, cfg.rho / qn, u, q)


def subspace_perturbation(g_f, basis: OrthonormalBasis, cfg: PerturbationConfig) -> InnerSolution:
    g_f = as_vector(g_f, "g_f")
    q = subspace_project_out(basis, g_f)
    qn = norm(q)
    if qn <= cfg.eps_q:
        return InnerSolution(None, Branch.FALLBACK, qn, float("nan"), None, q)
    u = q / qn
    return InnerSolution(cfg.rho * u, Branch.SUBSPACE, qn, cfg.rho / qn, u, q)


def amplified_displacement(sol: InnerSolution, cfg: PerturbationConfig) -> np.ndarray:
    """``beta * delta``; only defined for retain-neutral branches."""
    if sol.branch not in (Branch.ROSU, Branch.SUBSPACE):
        raise InvalidBranchError(f"amplification undefined on branch {sol.branch.value}")
    return cfg.beta * sol.delta


@lru_cache(maxsize=2)
def _sphere_directions(dim: int, n_samples: int, seed: int) -> np.ndarray:
    z = np.random.default_rng(seed).standard_normal((n_samples, dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    z.setflags(write=False)
    return z


def _project_rows(z: np.ndarray, u: np.ndarray) -> np.ndarray:
    out = z - np.outer(z @ u, u)
    return out - np.outer(out @ u, u)


def brute_force_inner_oracle(g_f, g_r, rho: float, n_samples: int = 100_000, seed: int = 0,
                             *, return_sampled: bool = False):
    """Best value of ``g_f . delta`` over sampled feasible points ``|delta| = rho, g_r . delta = 0``.

    Directions are drawn uniformly on the unit sphere, projected onto the
    hyperplane ``g_r^perp`` with the exact projector and rescaled to norm
    ``rho``.  The closed-form candidate is evaluated alongside.  Returns
    ``(best_value, best_delta)``; with ``return_sampled=True`` also returns
    the best value among the samples alone.

    Sample banks are cached per ``(dim, n_samples, seed)``, so repeated calls
    with the same seed reuse one set of directions.
    """
    g_f = as_vector(g_f, "g_f")
    g_r = as_vector(g_r, "g_r")
    if norm(g_r) == 0.0:
        raise DegenerateGradientError("oracle needs a nonzero retain gradient")
    if n_samples < 1000:
        raise ValueError("oracle needs at least 1000 samples")
    dim = g_f.shape[0]
    u_r = g_r / norm(g_r)
    z = _sphere_directions(dim, n_samples, seed)
    # value of rho * P z / |P z| against g_f, P = I - u_r u_r^T
    along = z @ u_r
    resid_sq = 1.0 - along * along
    values = rho * (z @ g_f - along * float(g_f @ u_r)) / np.sqrt(np.maximum(resid_sq, 1e-300))
    # Where |P z| is small, 1 - (z.u_r)^2 cancels; project those samples explicitly, twice.
    near = np.flatnonzero(resid_sq < 0.5)
    if near.size:
        pz = _project_rows(z[near], u_r)
        pn = np.linalg.norm(pz, axis=1)
        vals = np.full(near.size, -np.inf)
        good = pn > 0.0
        vals[good] = rho * (pz[good] @ g_f) / pn[good]
        values[near] = vals
    i = int(np.argmax(values))
    sampled_best = float(values[i])
    pz = _project_rows(z[i:i + 1], u_r)[0]
    best_delta = rho * pz / norm(pz) if np.isfinite(sampled_best) else np.zeros(dim)

    best_value = sampled_best
    closed = g_f - (g_f @ u_r) * u_r
    qn = norm(closed)
    if qn > 0.0:
        candidate = rho * closed / qn
        cand_value = float(g_f @ candidate)
        if cand_value >= best_value:
            best_value, best_delta = cand_value, candidate
    if return_sampled:
        return best_value, best_delta, sampled_best
    return best_value, best_delta
