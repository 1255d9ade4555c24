"""Outer updates: relaxed transported gradient, exact chain-rule gradient, and full steps."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateGeometryError,
    DegenerateGradientError,
    InvalidBranchError,
    UnsupportedDimensionError,
)
from .inner import (
    Branch,
    InnerSolution,
    PerturbationConfig,
    amplified_displacement,
    rosu_perturbation,
    standard_perturbation,
    subspace_perturbation,
)
from .linalg import OrthonormalBasis, as_vector, norm, operator_norm, subspace_project_out
from .objectives import ObjectivePair

MAX_JACOBIAN_DIM = 64

TWO_PHASE_START = 0.001


class StepBranch(str, enum.Enum):
    FULL = "Full"
    ZERO_ORDER = "ZeroOrder"
    FALLBACK = "Fallback"
    EXACT = "Exact"


class BetaKind(str, enum.Enum):
    FIXED = "Fixed"
    TIED_TO_LR = "TiedToLr"
    TWO_PHASE = "TwoPhase"


@dataclass(frozen=True)
class BetaSchedule:
    kind: BetaKind = BetaKind.FIXED
    fixed_value: float = 0.0
    warmup_steps: int = 0
    beta_high: float = 0.06
    beta_low: float = 0.012

    def __post_init__(self):
        object.__setattr__(self, "kind", BetaKind(self.kind))
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if min(self.fixed_value, self.beta_high, self.beta_low) < 0:
            raise ValueError("beta values must be >= 0")

    @classmethod
    def fixed(cls, value: float) -> "BetaSchedule":
        return cls(BetaKind.FIXED, fixed_value=value)

    @classmethod
    def tied(cls) -> "BetaSchedule":
        return cls(BetaKind.TIED_TO_LR)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "fixed_value": self.fixed_value,
            "warmup_steps": self.warmup_steps,
            "beta_high": self.beta_high,
            "beta_low": self.beta_low,
        }


def beta_at(schedule: BetaSchedule, step_index: int, eta_t: float, rho: float) -> float:
    if step_index < 0:
        raise ValueError("step_index must be >= 0")
    if schedule.kind is BetaKind.FIXED:
        return float(schedule.fixed_value)
    if schedule.kind is BetaKind.TIED_TO_LR:
        return float(eta_t) / float(rho)
    if step_index < schedule.warmup_steps:
        frac = step_index / schedule.warmup_steps
        return TWO_PHASE_START + (schedule.beta_high - TWO_PHASE_START) * frac
    return float(schedule.beta_low)


@dataclass(frozen=True)
class OuterStep:
    """One outer update from base point ``w``.

    ``surrogate_grad``/``transported``/``amplification`` are ``None`` on the
    fallback branch, where ``new_params = w - eta * g_r``.
    """

    surrogate_grad: np.ndarray | None
    transported: np.ndarray | None
    amplification: np.ndarray | None
    new_params: np.ndarray
    branch: StepBranch
    inner: InnerSolution | None = None
    g_f: np.ndarray | None = None
    g_r: np.ndarray | None = None
    beta: float = 0.0
    full_params: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Transported gradients


def relaxed_transported_gradient(g_r, sol: InnerSolution, g_tilde, tau: float) -> np.ndarray:
    """``g~ + alpha (g~ - (g_r.g~)/(|g_r|^2+tau) g_r - (u.g~) u)``."""
    if sol.branch is not Branch.ROSU:
        raise InvalidBranchError(f"transport needs a Rosu inner solution, got {sol.branch.value}")
    g_r = as_vector(g_r, "g_r")
    g_t = as_vector(g_tilde, "g_tilde")
    n2 = float(g_r @ g_r)
    if n2 == 0.0:
        raise DegenerateGradientError("retain gradient is zero")
    u = sol.unit_dir
    correction = g_t - (float(g_r @ g_t) / (n2 + tau)) * g_r - float(u @ g_t) * u
    return g_t + sol.alpha * correction


def subspace_transported_gradient(basis: OrthonormalBasis, sol: InnerSolution, g_tilde) -> np.ndarray:
    """Rank-k analogue: ``g~ + alpha (I - P_U - P_perp) g~``."""
    if sol.branch is not Branch.SUBSPACE:
        raise InvalidBranchError(f"transport needs a Subspace inner solution, got {sol.branch.value}")
    g_t = as_vector(g_tilde, "g_tilde")
    u = sol.unit_dir
    correction = subspace_project_out(basis, g_t) - float(u @ g_t) * u
    return g_t + sol.alpha * correction


def standard_transported_gradient(sol: InnerSolution, g_tilde) -> np.ndarray:
    """Identity-Hessian transport for the unconstrained perturbation: ``g~ + (rho/|g_f|)(I - P_f) g~``."""
    if sol.branch is not Branch.STANDARD:
        raise InvalidBranchError("standard transport needs a Standard inner solution")
    g_t = as_vector(g_tilde, "g_tilde")
    u = sol.unit_dir
    return g_t + sol.alpha * (g_t - float(u @ g_t) * u)


# ---------------------------------------------------------------------------
# Exact outer gradient


@dataclass(frozen=True)
class _ExactGeometry:
    w: np.ndarray
    g_f: np.ndarray
    g_r: np.ndarray
    q: np.ndarray
    q_norm: float
    u: np.ndarray
    delta: np.ndarray
    n2: float
    c: float  # g_f . g_r
    rho: float

    @property
    def alpha(self) -> float:
        return self.rho / self.q_norm


def _exact_geometry(pair: ObjectivePair, w, cfg: PerturbationConfig) -> _ExactGeometry:
    w = np.asarray(w, dtype=np.float64)
    g_f = pair.forget.grad(w)
    g_r = pair.retain.grad(w)
    n2 = float(g_r @ g_r)
    if n2 == 0.0:
        raise DegenerateGeometryError("retain gradient vanishes")
    c = float(g_f @ g_r)
    q = g_f - (c / n2) * g_r
    qn = norm(q)
    if qn <= cfg.eps_q:
        raise DegenerateGeometryError(f"|q| = {qn:.3e} is at or below eps_q")
    u = q / qn
    return _ExactGeometry(w, g_f, g_r, q, qn, u, cfg.rho * u, n2, c, cfg.rho)


def rosu_delta_exact(pair: ObjectivePair, w, cfg: PerturbationConfig) -> np.ndarray:
    """The unregularized map ``w -> rho q(w)/|q(w)|`` (used by the finite-difference oracles)."""
    return _exact_geometry(pair, w, cfg).delta


def surrogate_retain_objective(pair: ObjectivePair, cfg: PerturbationConfig):
    """``F(w) = L_r(w + delta_rosu(w))`` with the unregularized perturbation."""

    def f(w):
        return pair.retain.loss(np.asarray(w) + rosu_delta_exact(pair, w, cfg))

    return f


def _projector_differential_apply(geo: _ExactGeometry, h: np.ndarray) -> np.ndarray:
    """``DP_r[xi] g_f`` where ``h = H_r xi``."""
    g_r, n2, c = geo.g_r, geo.n2, geo.c
    return (c / n2) * h + (float(geo.g_f @ h) / n2) * g_r - (2.0 * c * float(g_r @ h) / n2**2) * g_r


def _jq_apply(pair: ObjectivePair, geo: _ExactGeometry, xi: np.ndarray) -> np.ndarray:
    hf = pair.forget.hvp(geo.w, xi)
    hr = pair.retain.hvp(geo.w, xi)
    proj = hf - (float(geo.g_r @ hf) / geo.n2) * geo.g_r
    return proj - _projector_differential_apply(geo, hr)


def _jq_transpose_apply(pair: ObjectivePair, geo: _ExactGeometry, y: np.ndarray) -> np.ndarray:
    g_r, g_f, n2, c = geo.g_r, geo.g_f, geo.n2, geo.c
    y_perp = y - (float(g_r @ y) / n2) * g_r
    m_t_y = (c / n2) * y + (float(g_r @ y) / n2) * g_f - (2.0 * c * float(g_r @ y) / n2**2) * g_r
    return pair.forget.hvp(geo.w, y_perp) - pair.retain.hvp(geo.w, m_t_y)


def exact_jacobian_apply(pair: ObjectivePair, w, cfg: PerturbationConfig, xi) -> np.ndarray:
    """``J_delta(w) xi = alpha (I - P_perp) J_q xi``."""
    geo = _exact_geometry(pair, w, cfg)
    jq = _jq_apply(pair, geo, np.asarray(xi, dtype=np.float64))
    return geo.alpha * (jq - float(geo.u @ jq) * geo.u)


def exact_outer_gradient(pair: ObjectivePair, w, cfg: PerturbationConfig) -> np.ndarray:
    """``(I + J_delta^T) grad L_r(w + delta)`` with forget/retain HVPs and the projector differential."""
    geo = _exact_geometry(pair, w, cfg)
    g_tilde = pair.retain.grad(geo.w + geo.delta)
    y = geo.alpha * (g_tilde - float(geo.u @ g_tilde) * geo.u)
    return g_tilde + _jq_transpose_apply(pair, geo, y)


def relaxed_outer_gradient(pair: ObjectivePair, w, cfg: PerturbationConfig) -> np.ndarray:
    """``(I + J_hat^T) grad L_r(w + delta)`` with ``tau = 0``."""
    geo = _exact_geometry(pair, w, cfg)
    g_tilde = pair.retain.grad(geo.w + geo.delta)
    sol = InnerSolution(geo.delta, Branch.ROSU, geo.q_norm, geo.alpha, geo.u, geo.q)
    return relaxed_transported_gradient(geo.g_r, sol, g_tilde, 0.0)


def dense_exact_jacobian(pair: ObjectivePair, w, cfg: PerturbationConfig) -> np.ndarray:
    geo = _exact_geometry(pair, w, cfg)
    d = geo.w.shape[0]
    if d > MAX_JACOBIAN_DIM:
        raise UnsupportedDimensionError(f"dense Jacobians limited to dim <= {MAX_JACOBIAN_DIM}")
    cols = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        jq = _jq_apply(pair, geo, e)
        cols.append(geo.alpha * (jq - float(geo.u @ jq) * geo.u))
    return np.stack(cols, axis=1)


def dense_relaxed_jacobian(pair: ObjectivePair, w, cfg: PerturbationConfig) -> np.ndarray:
    geo = _exact_geometry(pair, w, cfg)
    d = geo.w.shape[0]
    if d > MAX_JACOBIAN_DIM:
        raise UnsupportedDimensionError(f"dense Jacobians limited to dim <= {MAX_JACOBIAN_DIM}")
    p_r = np.outer(geo.g_r, geo.g_r) / geo.n2
    p_perp = np.outer(geo.u, geo.u)
    return geo.alpha * (np.eye(d) - p_r - p_perp)


def projector_differential_matrix(g_r, h) -> np.ndarray:
    """Dense ``DP_r[xi] = (h g^T + g h^T)/|g|^2 - 2 (g.h)/|g|^4 g g^T`` for ``h = H_r xi``."""
    g_r = np.asarray(g_r, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    n2 = float(g_r @ g_r)
    return (np.outer(h, g_r) + np.outer(g_r, h)) / n2 - 2.0 * float(g_r @ h) / n2**2 * np.outer(g_r, g_r)


def _dense_hessian(obj, w) -> tuple[np.ndarray, bool]:
    """Dense Hessian and whether it is exact (quadratics) or assembled from approximate HVPs."""
    if hasattr(obj, "hessian"):
        return np.asarray(obj.hessian(w)), True
    d = obj.dim
    cols = [obj.hvp(w, np.eye(d)[i]) for i in range(d)]
    h = np.stack(cols, axis=1)
    return 0.5 * (h + h.T), False


@dataclass(frozen=True)
class EpsPEstimate:
    value: float
    sampled: float
    analytic: float


def estimate_eps_p(retain, w, g_r, *, n_dirs: int = 64, seed: int = 0,
                   hessian: np.ndarray | None = None) -> EpsPEstimate:
    """Upper estimate of ``sup_{|xi|=1} |DP_r[xi]|_op``.

    Uses the larger of a sampled maximum over ``n_dirs`` unit directions and
    the analytic bound ``2 |H_r|_op / |g_r|``.
    """
    g_r = np.asarray(g_r, dtype=np.float64)
    if hessian is None:
        hessian, _ = _dense_hessian(retain, w)
    rng = np.random.default_rng(seed)
    sampled = 0.0
    for _ in range(n_dirs):
        xi = rng.standard_normal(g_r.shape[0])
        xi /= norm(xi)
        m = projector_differential_matrix(g_r, hessian @ xi)
        sampled = max(sampled, float(np.max(np.abs(np.linalg.eigvalsh(m)))))
    h_op = float(np.max(np.abs(np.linalg.eigvalsh(hessian))))
    analytic = 2.0 * h_op / norm(g_r)
    return EpsPEstimate(max(sampled, analytic), sampled, analytic)


@dataclass(frozen=True)
class JacobianReport:
    exact: np.ndarray
    relaxed: np.ndarray
    deviation_opnorm: float
    bound: float
    eps_h: float
    eps_p: float
    q_norm: float
    grad_deviation: float
    grad_bound: float
    heuristic: bool = False

    def exact_apply(self, xi) -> np.ndarray:
        return self.exact @ np.asarray(xi, dtype=np.float64)

    def relaxed_apply(self, xi) -> np.ndarray:
        return self.relaxed @ np.asarray(xi, dtype=np.float64)

    @property
    def holds(self) -> bool:
        return self.deviation_opnorm <= self.bound + 1e-9 and self.grad_deviation <= self.grad_bound + 1e-9


def relaxed_gradient_deviation_report(pair: ObjectivePair, w, cfg: PerturbationConfig, *,
                                      seed: int = 0) -> JacobianReport:
    """Dense comparison of exact and relaxed perturbation Jacobians against the deviation bound.

    For non-quadratic objectives the Hessians come from approximate HVPs and
    the report is flagged ``heuristic``.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape[0] > MAX_JACOBIAN_DIM:
        raise UnsupportedDimensionError(f"dense Jacobian audit limited to dim <= {MAX_JACOBIAN_DIM}")
    geo = _exact_geometry(pair, w, cfg)
    j_exact = dense_exact_jacobian(pair, w, cfg)
    j_relaxed = dense_relaxed_jacobian(pair, w, cfg)
    h_f, exact_f = _dense_hessian(pair.forget, w)
    h_r, exact_r = _dense_hessian(pair.retain, w)
    eps_h = float(np.max(np.abs(np.linalg.eigvalsh(h_f - np.eye(w.shape[0])))))
    eps_p = estimate_eps_p(pair.retain, w, geo.g_r, seed=seed, hessian=h_r).value
    deviation = operator_norm(j_exact - j_relaxed, seed=seed)
    bound = geo.alpha * (eps_h + eps_p * norm(geo.g_f))
    g_tilde = pair.retain.grad(w + geo.delta)
    grad_dev = norm((j_exact - j_relaxed).T @ g_tilde)
    grad_bound = bound * norm(g_tilde)
    return JacobianReport(j_exact, j_relaxed, deviation, bound, eps_h, eps_p, geo.q_norm,
                          grad_dev, grad_bound, heuristic=not (exact_f and exact_r))


# ---------------------------------------------------------------------------
# Steps


def _fallback(w, g_f, g_r, sol, cfg) -> OuterStep:
    return OuterStep(None, None, None, w - cfg.eta * g_r, StepBranch.FALLBACK, sol, g_f, g_r, 0.0)


def _rosu_like_step(pair, w, cfg, schedule, step_index, *, jacobian: bool,
                    descent: bool = True, amplify: bool = True) -> OuterStep:
    w = np.asarray(w, dtype=np.float64)
    g_f = pair.forget.grad(w)
    g_r = pair.retain.grad(w)
    sol = rosu_perturbation(g_f, g_r, cfg)
    if sol.is_fallback:
        return _fallback(w, g_f, g_r, sol, cfg)
    beta = beta_at(schedule, step_index, cfg.eta, cfg.rho) if amplify else 0.0
    g_tilde = pair.retain.grad(w + sol.delta)
    v = relaxed_transported_gradient(g_r, sol, g_tilde, cfg.tau) if jacobian else g_tilde
    amp = beta * sol.delta
    if descent:
        new = w + amp - cfg.eta * v
    else:
        new = w + amp
    branch = StepBranch.FULL if jacobian else StepBranch.ZERO_ORDER
    return OuterStep(g_tilde, v, amp, new, branch, sol, g_f, g_r, beta)


def rosu_step(pair: ObjectivePair, w, cfg: PerturbationConfig, schedule: BetaSchedule,
              step_index: int, *, descent: bool = True, amplify: bool = True) -> OuterStep:
    """One step of the full method: ``w + beta delta - eta v`` or the retain-descent fallback.

    ``descent=False`` drops ``-eta v`` and ``amplify=False`` forces ``beta = 0``
    (ablation endpoints).
    """
    return _rosu_like_step(pair, w, cfg, schedule, step_index, jacobian=True,
                           descent=descent, amplify=amplify)


def zero_order_step(pair: ObjectivePair, w, cfg: PerturbationConfig, schedule: BetaSchedule,
                    step_index: int) -> OuterStep:
    """As :func:`rosu_step` with ``v = grad L_r(w + delta)``."""
    return _rosu_like_step(pair, w, cfg, schedule, step_index, jacobian=False)


def exact_step(pair: ObjectivePair, w, cfg: PerturbationConfig, schedule: BetaSchedule,
               step_index: int) -> OuterStep:
    """Descends the exact chain-rule gradient of ``L_r(w + delta_rosu(w))`` (unregularized)."""
    w = np.asarray(w, dtype=np.float64)
    g_f = pair.forget.grad(w)
    g_r = pair.retain.grad(w)
    sol = rosu_perturbation(g_f, g_r, PerturbationConfig(cfg.rho, 0.0, cfg.eps_q, cfg.beta, cfg.eta))
    if sol.is_fallback:
        return _fallback(w, g_f, g_r, sol, cfg)
    beta = beta_at(schedule, step_index, cfg.eta, cfg.rho)
    g_tilde = pair.retain.grad(w + sol.delta)
    v = exact_outer_gradient(pair, w, cfg)
    amp = beta * sol.delta
    return OuterStep(g_tilde, v, amp, w + amp - cfg.eta * v, StepBranch.EXACT, sol, g_f, g_r, beta)


def subspace_step(pair: ObjectivePair, w, cfg: PerturbationConfig, schedule: BetaSchedule,
                  step_index: int, basis: OrthonormalBasis) -> OuterStep:
    """Rank-k protected-subspace step; fallback to retain descent when ``|q_U| <= eps_q``."""
    w = np.asarray(w, dtype=np.float64)
    g_f = pair.forget.grad(w)
    g_r = pair.retain.grad(w)
    sol = subspace_perturbation(g_f, basis, cfg)
    if sol.is_fallback:
        return _fallback(w, g_f, g_r, sol, cfg)
    beta = beta_at(schedule, step_index, cfg.eta, cfg.rho)
    g_tilde = pair.retain.grad(w + sol.delta)
    v = subspace_transported_gradient(basis, sol, g_tilde)
    amp = amplified_displacement(sol, PerturbationConfig(cfg.rho, cfg.tau, cfg.eps_q, beta, cfg.eta))
    return OuterStep(g_tilde, v, amp, w + amp - cfg.eta * v, StepBranch.FULL, sol, g_f, g_r, beta)


def standard_minmax_step(pair: ObjectivePair, w, cfg: PerturbationConfig) -> OuterStep:
    """Unconstrained min-max baseline: descend ``L_r(w + rho g_f/|g_f|)`` with identity-Hessian transport."""
    w = np.asarray(w, dtype=np.float64)
    g_f = pair.forget.grad(w)
    g_r = pair.retain.grad(w)
    if norm(g_f) == 0.0:
        return _fallback(w, g_f, g_r, None, cfg)
    sol = standard_perturbation(g_f, cfg)
    g_tilde = pair.retain.grad(w + sol.delta)
    v = standard_transported_gradient(sol, g_tilde)
    zero = np.zeros_like(w)
    return OuterStep(g_tilde, v, zero, w + zero - cfg.eta * v, StepBranch.FULL, sol, g_f, g_r, 0.0)


def representation_rosu_step(rep_pair: ObjectivePair, theta, cfg: PerturbationConfig,
                             schedule: BetaSchedule, step_index: int, noise_seed: int,
                             *, jacobian: bool = True) -> OuterStep:
    """Full-method step in the trainable coordinates of a representation-matching pair.

    The forget objective receives one batch-shared noise draw seeded by
    ``noise_seed``.  ``new_params`` holds the updated trainable vector and
    ``full_params`` the reconstructed full model.
    """
    forget = rep_pair.forget.with_noise(np.random.default_rng(noise_seed))
    theta_pair = ObjectivePair(forget.theta_view(), rep_pair.retain.theta_view())
    step = _rosu_like_step(theta_pair, theta, cfg, schedule, step_index, jacobian=jacobian)
    full = forget.embed(step.new_params)
    return OuterStep(step.surrogate_grad, step.transported, step.amplification, step.new_params,
                     step.branch, step.inner, step.g_f, step.g_r, step.beta, full)
