"""Seeded audits of the method's identities and bounds, with a JSONL report writer.

Each audit builds an instance family from a seed, measures the quantities a
claim talks about and returns :class:`AuditRecord` rows.  Claims are listed
in :data:`CLAIMS` together with their kind (inequality, lower bound, strict
inequality or identity) and tolerance.
"""

from __future__ import annotations

import enum
import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import mpmath
import numpy as np

from .errors import ReportIOError
from .inner import (
    PerturbationConfig,
    brute_force_inner_oracle,
    rosu_perturbation,
    standard_perturbation,
    subspace_perturbation,
)
from .linalg import Rank1Projector, cosine_coupling, norm, orthonormalize, project_out, regproj_gap
from .objectives import (
    CoupledPairSpec,
    MlpObjective,
    ObjectivePair,
    QuadraticObjective,
    make_coupled_pair,
    random_spd,
)
from .outer import (
    exact_outer_gradient,
    relaxed_gradient_deviation_report,
    surrogate_retain_objective,
)

DEFAULT_ABS_TOL = 1e-9
DEFAULT_REL_TOL = 1e-9
ORACLE_SAMPLES = 100_000
FD_REL_TOL = 1e-5


class ClaimKind(str, enum.Enum):
    UPPER = "upper"  # measured <= bound
    LOWER = "lower"  # measured >= bound
    STRICT = "strict"  # measured < bound
    IDENTITY = "identity"  # measured == target


@dataclass(frozen=True)
class Claim:
    citation: str
    kind: ClaimKind
    abs_tol: float = DEFAULT_ABS_TOL
    rel_tol: float = DEFAULT_REL_TOL


def _c(citation, kind, abs_tol=DEFAULT_ABS_TOL, rel_tol=DEFAULT_REL_TOL):
    return Claim(citation, ClaimKind(kind), abs_tol, rel_tol)


#: claim_id -> claim.  Identities with ``abs_tol = 0`` are purely relative.
CLAIMS: "OrderedDict[str, Claim]" = OrderedDict([
    ("prop-inner-value", _c("Prop. inner", "identity", 0.0, 1e-10)),
    ("prop-inner-oracle", _c("Prop. inner", "upper", 1e-15, 1e-12)),
    ("prop-inner-skipped", _c("Prop. inner", "upper", 0.0, 0.0)),
    ("thm-retain-damage-i", _c("Thm. retain-damage (i)", "upper")),
    ("thm-retain-damage-ii", _c("Thm. retain-damage (ii)", "lower")),
    ("cor-positive-alignment", _c("Cor. positive-alignment", "strict", 0.0, 0.0)),
    ("prop-tradeoff-ratio", _c("Prop. tradeoff", "identity", 1e-9, 0.0)),
    ("prop-gap-identity", _c("Prop. gap", "identity", 1e-14, 1e-9)),
    ("prop-gap-eps-bound", _c("Prop. gap", "upper")),
    ("prop-gap-lipschitz", _c("Prop. gap", "upper")),
    ("prop-exact-fd", _c("Prop. exact", "upper", 0.0, 0.0)),
    ("lem-relaxed-product-sum", _c("Lemma relaxed", "identity", 1e-12, 0.0)),
    ("prop-approx-grad-jacobian", _c("Prop. approx-grad", "upper")),
    ("prop-approx-grad-gradient", _c("Prop. approx-grad", "upper")),
    ("prop-approx-grad-identity-case", _c("Prop. approx-grad", "upper", 1e-10, 0.0)),
    ("prop-approx-grad-smoothness", _c("Prop. approx-grad", "upper")),
    ("prop-subspace-orthogonality", _c("Prop. subspace", "upper", 0.0, 0.0)),
    ("prop-subspace-retain-bound", _c("Prop. subspace", "upper")),
    ("prop-subspace-special-case", _c("Prop. subspace", "upper")),
    ("prop-subspace-nested", _c("Prop. subspace", "upper")),
    ("prop-partial-restore-neutral", _c("Prop. partial-restore (i)", "upper", 0.0, 0.0)),
    ("prop-partial-restore-gain", _c("Prop. partial-restore (ii)", "identity", 0.0, 1e-9)),
    ("prop-partial-restore-optimal", _c("Prop. partial-restore (iii)", "upper", 1e-15, 1e-12)),
    ("lem-regproj-gap", _c("Lemma regproj", "identity", 1e-300, 1e-10)),
    ("lem-regproj-q", _c("Lemma regproj", "upper")),
    ("lem-qsmall", _c("Lemma qsmall", "upper")),
    ("lem-reg-qsmall", _c("Lemma reg-qsmall", "upper")),
    ("lem-reg-relaxed-jac-equality", _c("Lemma reg-relaxed-jac", "identity", 1e-300, 1e-10)),
    ("lem-reg-relaxed-jac-bound", _c("Lemma reg-relaxed-jac", "upper")),
    ("eq-mini-full-transfer", _c("Eq. mini-full-transfer", "upper", 1e-10, 0.0)),
    ("eq-eps-orth-full-batch", _c("Eq. eps-orth", "upper", 0.0, 0.0)),
    ("eq-eps-orth-median-trend", _c("Eq. eps-orth", "upper", 0.0, 0.0)),
])


@dataclass(frozen=True)
class AuditRecord:
    claim_id: str
    instance_seed: int
    measured: float
    bound_or_target: float
    margin: float
    passed: bool
    notes: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), allow_nan=False)


def record(claim_id: str, instance_seed: int, measured: float, bound: float, notes: str = "") -> AuditRecord:
    """Build a record, computing margin and pass status from the claim's kind and tolerance."""
    claim = CLAIMS[claim_id]
    m, b = float(measured), float(bound)
    if claim.kind is ClaimKind.IDENTITY:
        margin = abs(m - b)
        passed = margin <= claim.abs_tol + claim.rel_tol * abs(b)
    else:
        tol = claim.abs_tol + claim.rel_tol * abs(b)
        if claim.kind is ClaimKind.UPPER:
            margin = b - m
            passed = margin >= -tol
        elif claim.kind is ClaimKind.LOWER:
            margin = m - b
            passed = margin >= -tol
        else:
            margin = b - m
            passed = margin > 0.0
    return AuditRecord(claim_id, int(instance_seed), m, b, float(margin), bool(passed), notes)


def instance_seed(seed: int, i: int) -> int:
    return int(seed) * 1_000_000 + int(i)


class SmoothnessMethod(str, enum.Enum):
    EXACT_EIGEN = "ExactEigen"
    POWER_ITERATION = "PowerIteration"
    SAMPLED_SUP = "SampledSup"


@dataclass(frozen=True)
class SmoothnessEstimate:
    m_r: float
    g_lip: float
    eps_h: float = 0.0
    eps_p: float = 0.0
    method: SmoothnessMethod = SmoothnessMethod.EXACT_EIGEN


def segment_gradient_max(retain, a, b, n_points: int = 100) -> float:
    """Largest ``|grad L_r|`` over ``n_points`` evenly spaced points of the segment ``[a, b]``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return max(norm(retain.grad(a + t * (b - a))) for t in np.linspace(0.0, 1.0, n_points))


def quadratic_smoothness(retain: QuadraticObjective, a=None, b=None) -> SmoothnessEstimate:
    """``M_r`` from the exact spectrum and ``G_r`` over the segment ``[a, b]`` when given."""
    g_lip = segment_gradient_max(retain, a, b) if a is not None else 0.0
    return SmoothnessEstimate(retain.lambda_max(), g_lip, method=SmoothnessMethod.EXACT_EIGEN)


def _exact_cfg(rho: float) -> PerturbationConfig:
    return PerturbationConfig(rho, tau=0.0)


# ---------------------------------------------------------------------------
# Inner optimality and amplification


def _random_gradient_pair(rng: np.random.Generator, dim: int):
    g_r = rng.standard_normal(dim) * rng.uniform(0.5, 2.0)
    g_f = rng.uniform(-1.5, 1.5) * g_r + rng.standard_normal(dim) * rng.uniform(0.2, 2.0)
    return g_f, g_r


def audit_inner_optimality(n_instances: int = 1000, seed: int = 0, *, dim_range=(2, 64),
                           n_samples: int = ORACLE_SAMPLES) -> list[AuditRecord]:
    """Closed-form inner value against the sampling oracle.

    Instances are evaluated grouped by dimension so each dimension's sample
    bank is drawn once; the oracle seed depends only on ``(seed, dim)``.
    Records are returned in instance order.
    """
    if n_instances < 1:
        raise ValueError("n_instances must be >= 1")
    lo, hi = dim_range
    dims = np.random.default_rng([seed, 101]).integers(lo, hi + 1, size=n_instances)
    out: dict[int, list[AuditRecord]] = {}
    for i in sorted(range(n_instances), key=lambda j: (dims[j], j)):
        s = instance_seed(seed, i)
        rng = np.random.default_rng(s)
        dim = int(dims[i])
        g_f, g_r = _random_gradient_pair(rng, dim)
        rho = float(rng.uniform(0.1, 2.0))
        cfg = PerturbationConfig(rho, tau=0.0)
        sol = rosu_perturbation(g_f, g_r, cfg)
        if sol.is_fallback:
            out[i] = [record("prop-inner-skipped", s, sol.q_norm, cfg.eps_q,
                             "skipped: degenerate instance, covered by lem-qsmall")]
            continue
        value = float(g_f @ sol.delta)
        _, _, sampled = brute_force_inner_oracle(g_f, g_r, rho, n_samples, seed=int(seed) * 1000 + dim,
                                                 return_sampled=True)
        out[i] = [
            record("prop-inner-value", s, value, rho * sol.q_norm, f"dim={dim}"),
            record("prop-inner-oracle", s, sampled, value, f"dim={dim} samples={n_samples}"),
        ]
    return [r for i in range(n_instances) for r in out[i]]


def audit_partial_restore(n_instances: int = 100, seed: int = 0, *, n_samples: int = 5000) -> list[AuditRecord]:
    """First-order identities of the amplified displacement ``beta * delta``."""
    recs = []
    for i in range(n_instances):
        s = instance_seed(seed, i)
        rng = np.random.default_rng(s)
        dim = int(rng.integers(2, 33))
        g_f, g_r = _random_gradient_pair(rng, dim)
        rho = float(rng.uniform(0.1, 2.0))
        beta = float(rng.uniform(0.01, 3.0))
        sol = rosu_perturbation(g_f, g_r, _exact_cfg(rho))
        if sol.is_fallback:
            continue
        amp = beta * sol.delta
        scale = beta * rho * norm(g_r)
        recs.append(record("prop-partial-restore-neutral", s, abs(float(g_r @ amp)), 1e-10 * scale,
                           f"beta={beta!r}"))
        recs.append(record("prop-partial-restore-gain", s, float(g_f @ amp), beta * rho * sol.q_norm))
        _, _, sampled = brute_force_inner_oracle(g_f, g_r, beta * rho, n_samples, seed=s, return_sampled=True)
        recs.append(record("prop-partial-restore-optimal", s, sampled, float(g_f @ amp),
                           f"radius={beta * rho!r}"))
    return recs


# ---------------------------------------------------------------------------
# Retain damage, trade-off and gap on coupled quadratics


def _coupled(theta: float, seed: int, dim: int = 16, scale_r: float = 2.0):
    forget, retain = make_coupled_pair(CoupledPairSpec(dim, math.cos(theta), seed=seed, scale_r=scale_r))
    return ObjectivePair(forget, retain), np.zeros(dim)


def audit_retain_damage(theta_grid, rho_grid, seed: int = 0) -> list[AuditRecord]:
    if len(theta_grid) == 0 or len(rho_grid) == 0:
        raise ValueError("grids must be nonempty")
    recs = []
    for i, theta in enumerate(theta_grid):
        if not 0.0 < theta < math.pi:
            raise ValueError("theta values must lie in (0, pi)")
        s = instance_seed(seed, i)
        pair, w = _coupled(theta, s)
        retain = pair.retain
        m_r = retain.lambda_max()
        g_f, g_r = pair.forget.grad(w), retain.grad(w)
        cos = cosine_coupling(g_f, g_r)
        gr_norm = norm(g_r)
        base = retain.loss(w)
        for rho in rho_grid:
            cfg = _exact_cfg(rho)
            d_rosu = rosu_perturbation(g_f, g_r, cfg).delta
            d_std = standard_perturbation(g_f, cfg).delta
            l_rosu = retain.loss(w + d_rosu)
            l_std = retain.loss(w + d_std)
            tag = f"theta={theta!r} rho={rho!r}"
            recs.append(record("thm-retain-damage-i", s, l_rosu - base, m_r * rho**2 / 2, tag))
            lower = rho * gr_norm * cos - m_r * rho**2
            kind = "informative" if lower > 0 else "consistent"
            recs.append(record("thm-retain-damage-ii", s, l_std - l_rosu, lower, f"{tag} {kind}"))
            if cos > m_r * rho / gr_norm:
                recs.append(record("cor-positive-alignment", s, l_rosu, l_std, tag))
    return recs


def audit_tradeoff_and_gap(theta_grid, seed: int = 0, rho: float = 0.5) -> list[AuditRecord]:
    recs = []
    for i, theta in enumerate(theta_grid):
        if not 0.0 < theta < math.pi:
            raise ValueError("theta values must lie in (0, pi)")
        s = instance_seed(seed, i)
        pair, w = _coupled(theta, s)
        g_f, g_r = pair.forget.grad(w), pair.retain.grad(w)
        cos = cosine_coupling(g_f, g_r)
        sin = math.sqrt(max(0.0, 1.0 - cos * cos))
        cfg = _exact_cfg(rho)
        d_rosu = rosu_perturbation(g_f, g_r, cfg).delta
        d_std = standard_perturbation(g_f, cfg).delta
        tag = f"theta={theta!r}"
        recs.append(record("prop-tradeoff-ratio", s, float(g_f @ d_rosu) / float(g_f @ d_std), sin, tag))
        gap = norm(d_rosu - d_std)
        recs.append(record("prop-gap-identity", s, gap, rho * math.sqrt(2.0 * (1.0 - sin)), tag))
        eps = abs(cos)
        recs.append(record("prop-gap-eps-bound", s, gap, math.sqrt(2.0) * rho * eps, tag))
        g_lip = segment_gradient_max(pair.retain, w + d_rosu, w + d_std)
        diff = abs(pair.retain.loss(w + d_rosu) - pair.retain.loss(w + d_std))
        recs.append(record("prop-gap-lipschitz", s, diff, math.sqrt(2.0) * g_lip * rho * eps,
                           f"{tag} G_r={g_lip!r}"))
    return recs


# ---------------------------------------------------------------------------
# Regularization lemmas (high-precision dense measurements)

_MP_DPS = 50


def _mp_vec(x):
    return mpmath.matrix([mpmath.mpf(float(v)) for v in x])


def _mp_opnorm(m) -> float:
    return float(max(mpmath.svd_r(m, compute_uv=False)))


def _mp_regularized_geometry(g_f, g_r, tau: float):
    """Dense ``P_r^tau``, ``P_r`` and ``P_tau`` at working precision, plus ``q_tau``."""
    d = len(g_f)
    gf, gr = _mp_vec(g_f), _mp_vec(g_r)
    t = mpmath.mpf(float(tau))
    n2 = (gr.T * gr)[0]
    outer = gr * gr.T
    p_tau = outer / (n2 + t)
    p_exact = outer / n2
    q = gf - p_tau * gf
    qn = mpmath.sqrt((q.T * q)[0])
    u = q / qn
    return d, p_tau, p_exact, u * u.T, qn


def _degenerate_pair(rng: np.random.Generator, dim: int, family: int, eps_q: float):
    g_r = rng.standard_normal(dim)
    g_r /= norm(g_r)
    noise = rng.standard_normal(dim)
    noise -= (noise @ g_r) * g_r
    noise /= norm(noise)
    if family == 1:  # nearly parallel, |q| below eps_q at tau = 0
        g_f = rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0]) * g_r + rng.uniform(0.0, 0.9) * eps_q * noise
    else:  # tiny forget gradient: every regularized residual is small too
        g_f = rng.uniform(0.05, 0.9) * eps_q * rng.standard_normal(dim) / math.sqrt(dim)
    return g_f, g_r * rng.uniform(0.5, 2.0)


def audit_regularization_lemmas(n_instances: int = 60, seed: int = 0, *, taus=(0.0, 1e-8, 1e-4, 1e-1),
                                dim_range=(2, 10), eps_q: float = 1e-6,
                                oracle_samples: int = 20_000) -> list[AuditRecord]:
    """Regularized-projector gap, degenerate-fallback bounds and the cross term.

    Instance ``i`` belongs to family ``i % 3``: generic, nearly parallel, or a
    tiny forget gradient.  The dense operator norms are measured in
    ``mpmath`` at 50 significant digits (float64 cancellation would swamp a
    ``1e-10`` relative check once ``tau`` is small).
    """
    recs = []
    mpmath.mp.dps = _MP_DPS
    for i in range(n_instances):
        s = instance_seed(seed, i)
        rng = np.random.default_rng(s)
        dim = int(rng.integers(dim_range[0], dim_range[1] + 1))
        family = i % 3
        if family == 0:
            g_f, g_r = _random_gradient_pair(rng, dim)
        else:
            g_f, g_r = _degenerate_pair(rng, dim, family, eps_q)
        rho = float(rng.uniform(0.1, 2.0))
        n2 = float(g_r @ g_r)
        q_exact = project_out(Rank1Projector(g_r, 0.0), g_f)
        oracle_value = None
        for tau in taus:
            tag = f"tau={tau!r} family={family} dim={dim}"
            proj = Rank1Projector(g_r, tau)
            d_tau = n2 + tau
            _, p_tau, p_exact, p_u, qn_mp = _mp_regularized_geometry(g_f, g_r, tau)
            recs.append(record("lem-regproj-gap", s, _mp_opnorm(p_tau - p_exact), regproj_gap(proj), tag))
            q_tau = project_out(proj, g_f)
            recs.append(record("lem-regproj-q", s, norm(q_tau - q_exact), tau * norm(g_f) / d_tau, tag))

            cfg = PerturbationConfig(rho, tau=tau, eps_q=eps_q)
            sol = rosu_perturbation(g_f, g_r, cfg)
            if sol.is_fallback:
                if oracle_value is None:
                    oracle_value = brute_force_inner_oracle(g_f, g_r, rho, oracle_samples, seed=s)[0]
                if tau == 0.0:
                    recs.append(record("lem-qsmall", s, oracle_value, rho * eps_q, tag))
                recs.append(record("lem-reg-qsmall", s, oracle_value,
                                   rho * (eps_q + tau / d_tau * norm(g_f)), tag))
                continue
            if tau == 0.0:
                eye = mpmath.eye(dim)
                prod = (eye - p_u) * (eye - p_exact)
                summed = eye - p_exact - p_u
                diff = max(abs(x) for x in (prod - summed))
                recs.append(record("lem-relaxed-product-sum", s, float(diff), 0.0, tag))
                continue
            eye = mpmath.eye(dim)
            alpha = mpmath.mpf(rho) / qn_mp
            j_prod = alpha * (eye - p_u) * (eye - p_tau)
            j_impl = alpha * (eye - p_tau - p_u)
            measured = _mp_opnorm(j_prod - j_impl)
            c = float(g_f @ g_r)
            qn = sol.q_norm
            equality = rho * tau * abs(c) * math.sqrt(n2) / (qn**2 * d_tau**2)
            bound = rho * tau * norm(g_f) * n2 / (qn**2 * d_tau**2)
            recs.append(record("lem-reg-relaxed-jac-equality", s, measured, equality, tag))
            recs.append(record("lem-reg-relaxed-jac-bound", s, measured, bound, tag))
    return recs


# ---------------------------------------------------------------------------
# Exact and relaxed outer gradients


def random_quadratic_pair(rng: np.random.Generator, dim: int) -> ObjectivePair:
    forget = QuadraticObjective(random_spd(dim, rng, (0.2, 3.0)), rng.standard_normal(dim))
    retain = QuadraticObjective(random_spd(dim, rng, (0.2, 3.0)), rng.standard_normal(dim))
    return ObjectivePair(forget, retain)


def _fd_outer_gradient(pair: ObjectivePair, w, cfg: PerturbationConfig) -> np.ndarray:
    f = surrogate_retain_objective(pair, cfg)
    out = np.empty_like(w)
    for j in range(w.shape[0]):
        h = 1e-5 * (1.0 + abs(w[j]))
        e = np.zeros_like(w)
        e[j] = h
        out[j] = (f(w + e) - f(w - e)) / (2.0 * h)
    return out


def audit_exact_gradient(n_instances: int = 50, seed: int = 0, dim_range=(4, 32)) -> list[AuditRecord]:
    recs = []
    for i in range(n_instances):
        s = instance_seed(seed, i)
        rng = np.random.default_rng(s)
        dim = int(rng.integers(dim_range[0], dim_range[1] + 1))
        pair = random_quadratic_pair(rng, dim)
        w = rng.standard_normal(dim)
        cfg = PerturbationConfig(float(rng.uniform(0.05, 0.5)), tau=0.0)
        exact = exact_outer_gradient(pair, w, cfg)
        fd = _fd_outer_gradient(pair, w, cfg)
        recs.append(record("prop-exact-fd", s, norm(exact - fd) / norm(fd), FD_REL_TOL, f"dim={dim}"))
    return recs


def identity_linear_pair(rng: np.random.Generator, dim: int) -> ObjectivePair:
    """Identity-Hessian forget loss and a linear retain loss: both relaxations are exact."""
    forget = QuadraticObjective(np.eye(dim), rng.standard_normal(dim))
    retain = QuadraticObjective(np.zeros((dim, dim)), np.zeros(dim), b=rng.standard_normal(dim))
    return ObjectivePair(forget, retain)


def audit_relaxed_gradient(n_instances: int = 200, seed: int = 0, dim_range=(4, 32),
                           n_identity_cases: int = 5) -> list[AuditRecord]:
    recs = []
    for i in range(n_instances):
        s = instance_seed(seed, i)
        rng = np.random.default_rng(s)
        dim = int(rng.integers(dim_range[0], dim_range[1] + 1))
        pair = random_quadratic_pair(rng, dim)
        w = rng.standard_normal(dim)
        rho = float(rng.uniform(0.05, 0.5))
        cfg = PerturbationConfig(rho, tau=0.0)
        rep = relaxed_gradient_deviation_report(pair, w, cfg, seed=s)
        tag = f"dim={dim} |q|={rep.q_norm!r}"
        recs.append(record("prop-approx-grad-jacobian", s, rep.deviation_opnorm, rep.bound, tag))
        recs.append(record("prop-approx-grad-gradient", s, rep.grad_deviation, rep.grad_bound, tag))
        g_r = pair.retain.grad(w)
        sol = rosu_perturbation(pair.forget.grad(w), g_r, cfg)
        g_tilde = pair.retain.grad(w + sol.delta)
        recs.append(record("prop-approx-grad-smoothness", s, norm(g_tilde),
                           norm(g_r) + pair.retain.lambda_max() * rho, tag))
    for k in range(n_identity_cases):
        s = instance_seed(seed, n_instances + k)
        rng = np.random.default_rng(s)
        dim = int(rng.integers(dim_range[0], dim_range[1] + 1))
        pair = identity_linear_pair(rng, dim)
        w = rng.standard_normal(dim)
        rep = relaxed_gradient_deviation_report(pair, w, PerturbationConfig(0.3, tau=0.0), seed=s)
        recs.append(record("prop-approx-grad-identity-case", s, rep.deviation_opnorm, 0.0,
                           f"dim={dim} bound={rep.bound!r}"))
    return recs


# ---------------------------------------------------------------------------
# Protected subspaces


def audit_subspace(n_instances: int = 500, k_grid=(1, 2, 3, 4), seed: int = 0, *,
                   max_dim: int = 24) -> list[AuditRecord]:
    recs = []
    k_grid = list(k_grid)
    for i in range(n_instances):
        s = instance_seed(seed, i)
        rng = np.random.default_rng(s)
        k = int(k_grid[i % len(k_grid)])
        dim = int(rng.integers(k + 2, max(k + 2, max_dim) + 1))
        if k > dim - 1:
            raise ValueError("k must be <= dim - 1")
        cos = float(rng.uniform(-0.95, 0.95))
        forget, retain = make_coupled_pair(CoupledPairSpec(dim, cos, seed=s))
        w = np.zeros(dim)
        g_f, g_r = forget.grad(w), retain.grad(w)
        rho = float(rng.uniform(0.05, 1.0))
        cfg = PerturbationConfig(rho, tau=0.0)
        m_r = retain.lambda_max()
        tag = f"k={k} dim={dim}"

        # generic protected subspace
        basis = orthonormalize(list(rng.standard_normal((k, dim))))
        sol = subspace_perturbation(g_f, basis, cfg)
        if not sol.is_fallback:
            worst = 0.0
            for _ in range(5):
                h = basis.columns @ rng.standard_normal(basis.rank)
                worst = max(worst, abs(float(h @ sol.delta)) / norm(h))
            recs.append(record("prop-subspace-orthogonality", s, worst, 1e-9 * rho, tag))
            resid = norm(g_r - basis.columns @ (basis.columns.T @ g_r))
            recs.append(record("prop-subspace-retain-bound", s, retain.loss(w + sol.delta) - retain.loss(w),
                               rho * resid + m_r * rho**2 / 2, tag))

        # g_r inside the protected span
        with_gr = orthonormalize([g_r] + list(rng.standard_normal((k - 1, dim))))
        sol_gr = subspace_perturbation(g_f, with_gr, cfg)
        q = rosu_perturbation(g_f, g_r, cfg)
        if not sol_gr.is_fallback and not q.is_fallback:
            recs.append(record("prop-subspace-special-case", s, rho * sol_gr.q_norm, rho * q.q_norm,
                               f"{tag} gain"))
            recs.append(record("prop-subspace-special-case", s,
                               retain.loss(w + sol_gr.delta) - retain.loss(w), m_r * rho**2 / 2,
                               f"{tag} retain"))

        # nested U1 within U2
        k2 = min(k + 1 + int(rng.integers(0, 2)), dim - 1)
        raw = list(rng.standard_normal((k2, dim)))
        u1 = orthonormalize(raw[:k])
        u2 = orthonormalize(raw)
        s1 = subspace_perturbation(g_f, u1, cfg)
        s2 = subspace_perturbation(g_f, u2, cfg)
        recs.append(record("prop-subspace-nested", s, rho * s2.q_norm, rho * s1.q_norm,
                           f"{tag} k2={k2}"))
    return recs


# ---------------------------------------------------------------------------
# Mini-batch transfer


@dataclass
class TransferAudit:
    batch_size: int
    eps_orth_samples: list[float] = field(default_factory=list)
    bound_samples: list[float] = field(default_factory=list)
    skipped: int = 0

    @property
    def median(self) -> float:
        return float(np.median(self.eps_orth_samples)) if self.eps_orth_samples else 0.0

    def holds(self, tol: float = 1e-10) -> bool:
        return all(e <= b + tol for e, b in zip(self.eps_orth_samples, self.bound_samples))


def audit_minibatch_transfer(mlp_pair: ObjectivePair, w, batch_sizes, n_pairs: int = 100, seed: int = 0,
                             *, forget_batch: int = 32, eps_q: float = 1e-6) -> list[TransferAudit]:
    """Full-retain orthogonality violation of mini-batch retain-neutral directions.

    ``mlp_pair`` holds the full forget and retain :class:`MlpObjective`
    sets; ``w`` is the fixed checkpoint.  A batch size equal to the retain
    set size uses the whole set.
    """
    forget: MlpObjective = mlp_pair.forget
    retain: MlpObjective = mlp_pair.retain
    if n_pairs < 100:
        raise ValueError("n_pairs must be >= 100")
    if any(b > retain.n or b < 1 for b in batch_sizes):
        raise ValueError("batch sizes must lie in [1, retain-set size]")
    w = np.asarray(w, dtype=np.float64)
    g_full = retain.grad(w)
    g_full_norm = norm(g_full)
    out = []
    for j, b in enumerate(batch_sizes):
        rng = np.random.default_rng([seed, j, int(b)])
        audit = TransferAudit(int(b))
        for _ in range(n_pairs):
            fb = rng.choice(forget.n, size=min(forget_batch, forget.n), replace=False)
            rb = rng.choice(retain.n, size=int(b), replace=False)
            g_f = forget.subset(fb).grad(w)
            g_r = retain.subset(rb).grad(w)
            sol = rosu_perturbation(g_f, g_r, PerturbationConfig(1.0, tau=0.0, eps_q=eps_q))
            if sol.is_fallback:
                audit.skipped += 1
                continue
            audit.eps_orth_samples.append(abs(float(g_full @ sol.unit_dir)) / g_full_norm)
            audit.bound_samples.append(norm(g_full - g_r) / g_full_norm)
        out.append(audit)
    return out


MEDIAN_SLACK = 0.10


def transfer_records(audits: list[TransferAudit], retain_size: int, seed: int = 0) -> list[AuditRecord]:
    recs = []
    for a in audits:
        for n, (e, b) in enumerate(zip(a.eps_orth_samples, a.bound_samples)):
            recs.append(record("eq-mini-full-transfer", instance_seed(seed, n), e, b,
                               f"batch={a.batch_size}"))
        if a.batch_size == retain_size and a.eps_orth_samples:
            recs.append(record("eq-eps-orth-full-batch", seed, max(a.eps_orth_samples), 1e-10,
                               f"batch={a.batch_size} skipped={a.skipped}"))
    for prev, cur in zip(audits, audits[1:]):
        recs.append(record("eq-eps-orth-median-trend", seed, cur.median, prev.median * (1 + MEDIAN_SLACK),
                           f"batch {prev.batch_size}->{cur.batch_size}"))
    return recs


# ---------------------------------------------------------------------------
# Registry and report


@dataclass(frozen=True)
class AuditScale:
    inner: int = 1000
    inner_samples: int = ORACLE_SAMPLES
    partial_restore: int = 100
    theta_points: int = 50
    rho_points: int = 10
    regularization: int = 60
    exact_gradient: int = 50
    relaxed_gradient: int = 200
    subspace: int = 500
    transfer_pairs: int = 100


FULL_SCALE = AuditScale()
QUICK_SCALE = AuditScale(inner=40, inner_samples=5000, partial_restore=10, theta_points=8, rho_points=3,
                         regularization=9, exact_gradient=4, relaxed_gradient=8, subspace=20,
                         transfer_pairs=100)


def theta_grid(n: int) -> list[float]:
    """``n`` evenly spaced angles strictly inside ``(0, pi)``."""
    return [math.pi * (j + 1) / (n + 1) for j in range(n)]


def rho_grid(n: int) -> list[float]:
    return [float(x) for x in np.geomspace(0.01, 2.0, n)]


def transfer_checkpoint(seed: int = 0):
    """Fixed toy-MLP checkpoint for the transfer audit: the pretrained class-wise blobs model.

    Under random forgetting the converged full retain gradient is small next
    to per-example noise, so relative estimation errors stay above 1 for every
    batch size; the class-wise split keeps a resolvable retain signal.
    """
    from .toy import CLASSWISE, make_blobs_task, train_gd

    task = make_blobs_task(CLASSWISE, seed)
    w = train_gd(task.train, seed)
    return ObjectivePair(task.forget, task.retain), w


def run_registry(seed: int = 0, scale: AuditScale = FULL_SCALE) -> list[AuditRecord]:
    """Every audit in a fixed order."""
    recs: list[AuditRecord] = []
    recs += audit_inner_optimality(scale.inner, seed, n_samples=scale.inner_samples)
    recs += audit_partial_restore(scale.partial_restore, seed)
    recs += audit_retain_damage(theta_grid(scale.theta_points), rho_grid(scale.rho_points), seed)
    recs += audit_tradeoff_and_gap(theta_grid(scale.theta_points), seed)
    recs += audit_regularization_lemmas(scale.regularization, seed)
    recs += audit_exact_gradient(scale.exact_gradient, seed)
    recs += audit_relaxed_gradient(scale.relaxed_gradient, seed)
    recs += audit_subspace(scale.subspace, seed=seed)
    pair, w = transfer_checkpoint(seed)
    sizes = [16, 64, 256, pair.retain.n]
    recs += transfer_records(audit_minibatch_transfer(pair, w, sizes, scale.transfer_pairs, seed),
                             pair.retain.n, seed)
    return recs


def summarize(records) -> dict:
    counts: "OrderedDict[str, dict]" = OrderedDict()
    for r in records:
        c = counts.setdefault(r.claim_id, {"passed": 0, "total": 0})
        c["total"] += 1
        c["passed"] += int(r.passed)
    return {"summary": counts, "n_records": len(records),
            "all_passed": all(r.passed for r in records)}


def emit_report(records, path) -> None:
    """JSONL: one record per line, then a summary line with pass counts per claim."""
    lines = [r.to_json() for r in records]
    lines.append(json.dumps(summarize(records)))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise ReportIOError(f"cannot write report to {path}: {exc}") from exc


def read_report(path) -> tuple[list[AuditRecord], dict]:
    with open(path, encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    if not rows or "summary" not in rows[-1]:
        raise ValueError("report has no summary line")
    return [AuditRecord(**row) for row in rows[:-1]], rows[-1]
