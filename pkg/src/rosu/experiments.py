"""Seeded toy unlearning runs: configuration, the step loop, ablations, sweeps and file output."""

from __future__ import annotations

import csv
import dataclasses
import enum
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DegenerateGradientError, ReportIOError
from .inner import DEFAULT_EPS_Q, DEFAULT_TAU, PerturbationConfig
from .linalg import Rank1Projector, cosine_coupling, norm, orthonormalize, project_out
from .objectives import (
    CoupledPairSpec,
    ObjectivePair,
    QuadraticObjective,
    RepresentationObjective,
    make_coupled_pair,
    random_spd,
)
from .outer import (
    BetaSchedule,
    rosu_step,
    standard_minmax_step,
    subspace_step,
    zero_order_step,
)
from .toy import CLASSWISE, RANDOM, accuracies, make_blobs_task, train_gd


class Task(str, enum.Enum):
    COUPLED_QUADRATIC = "CoupledQuadratic"
    BLOBS_CLASSWISE = "BlobsClasswise"
    BLOBS_RANDOM = "BlobsRandom"
    REPRESENTATION = "Representation"


class Method(str, enum.Enum):
    ROSU = "Rosu"
    ROSU_ZERO_ORDER = "RosuZeroOrder"
    ROSU_SUBSPACE_K = "RosuSubspaceK"
    STANDARD_MINMAX = "StandardMinMax"
    FINE_TUNE = "FineTune"
    NEG_GRAD = "NegGrad"
    OUTER_PROJECTION = "OuterProjection"


#: Which parts of the full update ``w + beta delta - eta v`` are applied.
COMPONENTS = ("full", "delta_only", "v_only")

BLOBS_TASKS = (Task.BLOBS_CLASSWISE, Task.BLOBS_RANDOM)
NO_PERTURBATION = "NoPerturbation"


@dataclass(frozen=True)
class ExperimentConfig:
    task: Task = Task.COUPLED_QUADRATIC
    method: Method = Method.ROSU
    rho: float = 0.1
    eta: float = 0.05
    beta_schedule: BetaSchedule = field(default_factory=BetaSchedule)
    tau: float = DEFAULT_TAU
    eps_q: float = DEFAULT_EPS_Q
    steps: int = 100
    forget_batch: int = 32
    retain_batch: int = 64
    seed: int = 0
    subspace_k: int = 1
    # toy-substrate knobs
    dim: int = 16
    target_cos: float = 0.9
    hidden: int = 32
    pretrain_steps: int = 2000
    pretrain_lr: float = 0.5
    noise_std: float = 0.01
    components: str = "full"

    def __post_init__(self):
        try:
            object.__setattr__(self, "task", Task(self.task))
            object.__setattr__(self, "method", Method(self.method))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        bs = self.beta_schedule
        if isinstance(bs, (int, float)) and not isinstance(bs, bool):
            bs = BetaSchedule.fixed(float(bs))
        elif isinstance(bs, dict):
            try:
                bs = BetaSchedule(**bs)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid beta_schedule: {exc}") from exc
        elif not isinstance(bs, BetaSchedule):
            raise ConfigError("beta_schedule must be an object, a number or a BetaSchedule")
        object.__setattr__(self, "beta_schedule", bs)
        self._validate()

    def _validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        for name in ("rho", "eta", "tau", "eps_q", "target_cos", "pretrain_lr", "noise_std"):
            v = getattr(self, name)
            need(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v),
                 f"{name} must be a finite number")
        for name in ("steps", "forget_batch", "retain_batch", "seed", "subspace_k", "dim",
                     "hidden", "pretrain_steps"):
            need(isinstance(getattr(self, name), int) and not isinstance(getattr(self, name), bool),
                 f"{name} must be an integer")
        need(self.rho > 0, "rho must be > 0")
        need(self.eta > 0, "eta must be > 0")
        need(self.tau >= 0, "tau must be >= 0")
        need(self.eps_q > 0, "eps_q must be > 0")
        need(self.steps >= 1, "steps must be >= 1")
        need(self.forget_batch >= 1 and self.retain_batch >= 1, "batch sizes must be >= 1")
        need(self.seed >= 0, "seed must be >= 0")
        need(self.dim >= 2, "dim must be >= 2")
        need(-1.0 <= self.target_cos <= 1.0, "target_cos must lie in [-1, 1]")
        need(1 <= self.hidden <= 64, "hidden must lie in [1, 64]")
        need(self.pretrain_steps >= 0 and self.pretrain_lr > 0, "invalid pretraining settings")
        need(self.noise_std >= 0, "noise_std must be >= 0")
        need(self.components in COMPONENTS, f"components must be one of {COMPONENTS}")
        need(self.components == "full" or self.method is Method.ROSU,
             "partial components are only defined for method Rosu")
        if self.method is Method.ROSU_SUBSPACE_K:
            need(self.task in BLOBS_TASKS, "RosuSubspaceK needs per-sample gradients (Blobs tasks)")
            need(1 <= self.subspace_k <= self.retain_batch, "subspace_k must lie in [1, retain_batch]")

    def perturbation(self) -> PerturbationConfig:
        return PerturbationConfig(self.rho, self.tau, self.eps_q, 0.0, self.eta)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, enum.Enum):
                v = v.value
            elif isinstance(v, BetaSchedule):
                v = v.to_dict()
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def load_config(path) -> ExperimentConfig:
    """Read a JSON config; ``OSError`` for unreadable files, :class:`ConfigError` otherwise."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data)


@dataclass(frozen=True)
class MetricsRow:
    step: int
    retain_loss: float
    forget_loss: float
    surrogate_retain_loss: float
    cos_coupling: float
    q_norm: float
    branch: str
    retain_acc: float | None = None
    forget_acc: float | None = None
    test_acc: float | None = None
    retain_residual: float = 0.0  # |g_r . delta| on the batch gradients
    beta: float = 0.0


METRIC_FIELDS = tuple(f.name for f in dataclasses.fields(MetricsRow))


@dataclass(frozen=True)
class RunRecord:
    config: ExperimentConfig
    rows: list[MetricsRow]
    final_summary: dict


# ---------------------------------------------------------------------------
# Substrates


@lru_cache(maxsize=8)
def _pretrained(protocol: str, seed: int, hidden: int, steps: int, lr: float):
    task = make_blobs_task(protocol, seed, hidden)
    w0 = train_gd(task.train, seed, steps, lr)
    ref = train_gd(task.retain, seed, steps, lr)
    w0.setflags(write=False)
    ref.setflags(write=False)
    return task, w0, ref


def parallel_pair(dim: int, seed: int, sign: float = 1.0) -> ObjectivePair:
    """A pair with ``L_f = sign * L_r``: the gradients stay parallel everywhere."""
    rng = np.random.default_rng(seed)
    a = random_spd(dim, rng)
    c = rng.standard_normal(dim)
    return ObjectivePair(QuadraticObjective(sign * a, c), QuadraticObjective(a, c))


class _Substrate:
    """Uniform access to full-set objectives, per-step batch pairs and accuracies."""

    uses_theta = False

    def full_pair(self) -> ObjectivePair: ...

    def batch_pair(self, t: int) -> ObjectivePair: ...

    def accuracies(self, w) -> dict | None:
        return None

    def per_sample_retain_grads(self, w, k: int, t: int):
        raise ConfigError("per-sample gradients are only available on Blobs tasks")

    def reference_accuracies(self) -> dict | None:
        return None

    def full_model(self, w):
        return w


class _QuadraticSubstrate(_Substrate):
    def __init__(self, cfg: ExperimentConfig):
        if abs(cfg.target_cos) == 1.0:
            self.pair = parallel_pair(cfg.dim, cfg.seed, cfg.target_cos)
            self.w0 = np.zeros(cfg.dim)
        else:
            forget, retain = make_coupled_pair(CoupledPairSpec(cfg.dim, cfg.target_cos, seed=cfg.seed))
            self.pair = ObjectivePair(forget, retain)
            self.w0 = np.zeros(cfg.dim)

    def full_pair(self):
        return self.pair

    def batch_pair(self, t):
        return self.pair


class _BlobsSubstrate(_Substrate):
    def __init__(self, cfg: ExperimentConfig):
        protocol = CLASSWISE if cfg.task is Task.BLOBS_CLASSWISE else RANDOM
        self.task, w0, self.ref = _pretrained(protocol, cfg.seed, cfg.hidden, cfg.pretrain_steps,
                                              cfg.pretrain_lr)
        self.w0 = np.array(w0)
        self.forget, self.retain = self.task.forget, self.task.retain
        self.fb = min(cfg.forget_batch, self.forget.n)
        self.rb = min(cfg.retain_batch, self.retain.n)
        rng = np.random.default_rng([cfg.seed, 29])
        self.batches = [(rng.choice(self.forget.n, self.fb, replace=False),
                         rng.choice(self.retain.n, self.rb, replace=False)) for _ in range(cfg.steps + 1)]

    def full_pair(self):
        return ObjectivePair(self.forget, self.retain)

    def batch_pair(self, t):
        fb, rb = self.batches[t]
        return ObjectivePair(self.forget.subset(fb), self.retain.subset(rb))

    def per_sample_retain_grads(self, w, k, t):
        rb = self.batches[t][1][:k]
        return [self.retain.subset([i]).grad(w) for i in rb]

    def accuracies(self, w):
        return accuracies(self.task, w)

    def reference_accuracies(self):
        return accuracies(self.task, self.ref)


class _RepresentationSubstrate(_Substrate):
    """Match first-hidden-layer activations of the pretrained random-forgetting blobs model.

    Trainable coordinates are the first layer's weights and biases.  The run
    starts from a seeded perturbation of the pretrained values, since at the
    reference point itself the retain gradient vanishes identically.
    """

    uses_theta = True
    START_NOISE = 0.05

    def __init__(self, cfg: ExperimentConfig):
        task, w_ref, _ = _pretrained(RANDOM, cfg.seed, cfg.hidden, cfg.pretrain_steps, cfg.pretrain_lr)
        net = task.net
        ws, bs, _ = net.layer_slices()[0]
        idx = np.r_[np.arange(ws.start, ws.stop), np.arange(bs.start, bs.stop)]
        x = task.train.inputs
        self.forget_x = x[task.forget_idx]
        self.retain_x = x[task.retain_idx]
        self.make = lambda probes, noise_std: RepresentationObjective(net, w_ref, idx, 1, probes, noise_std)
        self.full_forget = self.make(self.forget_x, cfg.noise_std)
        self.full_retain = self.make(self.retain_x, 0.0)
        rng = np.random.default_rng([cfg.seed, 31])
        theta_ref = self.full_retain.restrict(w_ref)
        self.w0 = theta_ref + self.START_NOISE * rng.standard_normal(theta_ref.shape[0])
        self.fb = min(cfg.forget_batch, self.forget_x.shape[0])
        self.rb = min(cfg.retain_batch, self.retain_x.shape[0])
        rng = np.random.default_rng([cfg.seed, 29])
        self.batches = []
        for t in range(cfg.steps + 1):
            fb = rng.choice(self.forget_x.shape[0], self.fb, replace=False)
            rb = rng.choice(self.retain_x.shape[0], self.rb, replace=False)
            self.batches.append((fb, rb, int(rng.integers(0, 2**32))))

    def full_pair(self):
        return ObjectivePair(self.full_forget.theta_view(), self.full_retain.theta_view())

    def batch_pair(self, t):
        fb, rb, noise_seed = self.batches[t]
        forget = self.make(self.forget_x[fb], self.full_forget.noise_std).with_noise(
            np.random.default_rng(noise_seed))
        return ObjectivePair(forget.theta_view(), self.make(self.retain_x[rb], 0.0).theta_view())

    def full_model(self, theta):
        return self.full_retain.embed(theta)


def _substrate(cfg: ExperimentConfig) -> _Substrate:
    if cfg.task is Task.COUPLED_QUADRATIC:
        return _QuadraticSubstrate(cfg)
    if cfg.task in BLOBS_TASKS:
        return _BlobsSubstrate(cfg)
    return _RepresentationSubstrate(cfg)


# ---------------------------------------------------------------------------
# The loop


@dataclass
class _StepInfo:
    new_w: np.ndarray
    delta: np.ndarray | None
    branch: str
    beta: float = 0.0


def _apply_method(cfg: ExperimentConfig, sub: _Substrate, pair: ObjectivePair, w, t: int) -> _StepInfo:
    pc = cfg.perturbation()
    m = cfg.method
    if m is Method.ROSU:
        step = rosu_step(pair, w, pc, cfg.beta_schedule, t, descent=cfg.components != "delta_only",
                         amplify=cfg.components != "v_only")
    elif m is Method.ROSU_ZERO_ORDER:
        step = zero_order_step(pair, w, pc, cfg.beta_schedule, t)
    elif m is Method.ROSU_SUBSPACE_K:
        if cfg.subspace_k == 1:
            vecs = [pair.retain.grad(w)]
        else:
            vecs = sub.per_sample_retain_grads(w, cfg.subspace_k, t)
        basis = orthonormalize(vecs)
        step = subspace_step(pair, w, pc, cfg.beta_schedule, t, basis)
    elif m is Method.STANDARD_MINMAX:
        step = standard_minmax_step(pair, w, pc)
    elif m is Method.FINE_TUNE:
        return _StepInfo(w - cfg.eta * pair.retain.grad(w), None, NO_PERTURBATION)
    elif m is Method.NEG_GRAD:
        return _StepInfo(w + cfg.eta * pair.forget.grad(w), None, NO_PERTURBATION)
    else:  # OuterProjection: retain descent plus ascent along the retain-orthogonal forget component
        g_r = pair.retain.grad(w)
        g_f = pair.forget.grad(w)
        if norm(g_r) == 0.0:
            return _StepInfo(w + cfg.eta * g_f, None, NO_PERTURBATION)
        q = project_out(Rank1Projector(g_r, cfg.tau), g_f)
        return _StepInfo(w - cfg.eta * (g_r - q), None, NO_PERTURBATION)
    delta = None if step.inner is None else step.inner.delta
    branch = step.inner.branch.value if step.inner is not None else "DegenerateFallback"
    return _StepInfo(step.new_params, delta, branch, step.beta)


def _diagnostics(cfg, pair: ObjectivePair, w):
    g_f, g_r = pair.forget.grad(w), pair.retain.grad(w)
    try:
        cos = cosine_coupling(g_f, g_r)
    except DegenerateGradientError:
        cos = 0.0
    if norm(g_r) == 0.0:
        return cos, norm(g_f), g_r
    q = project_out(Rank1Projector(g_r, cfg.tau), g_f)
    return cos, norm(q), g_r


def run(cfg: ExperimentConfig) -> RunRecord:
    """Run ``cfg.steps`` updates of the configured method and log one row per iterate.

    Row ``t`` describes the iterate ``w_t`` and the step taken there: losses
    on the full forget/retain sets, batch coupling and ``|q_tau|``, the
    branch and the surrogate retain loss at ``w_t + delta_t``.  The final
    row (``t = steps``) records the diagnostics of the step that would come next.
    """
    if not isinstance(cfg, ExperimentConfig):
        raise ConfigError("run needs an ExperimentConfig")
    sub = _substrate(cfg)
    full = sub.full_pair()
    w = np.array(sub.w0, dtype=np.float64)
    pre = sub.accuracies(sub.full_model(w))
    rows = []
    for t in range(cfg.steps + 1):
        pair = sub.batch_pair(t)
        cos, qn, g_r = _diagnostics(cfg, pair, w)
        info = _apply_method(cfg, sub, pair, w, t)
        retain_loss = full.retain.loss(w)
        surrogate = full.retain.loss(w + info.delta) if info.delta is not None else retain_loss
        residual = abs(float(g_r @ info.delta)) if info.delta is not None else 0.0
        acc = sub.accuracies(sub.full_model(w)) or {}
        rows.append(MetricsRow(t, retain_loss, full.forget.loss(w), surrogate, cos, qn, info.branch,
                               acc.get("retain_acc"), acc.get("forget_acc"), acc.get("test_acc"),
                               residual, info.beta))
        if t < cfg.steps:
            w = info.new_w
    for r in rows:
        if not all(math.isfinite(x) for x in (r.retain_loss, r.forget_loss, r.surrogate_retain_loss)):
            raise FloatingPointError(f"non-finite loss at step {r.step}")
    return RunRecord(cfg, rows, _summary(cfg, sub, rows, pre))


def _summary(cfg, sub: _Substrate, rows, pre) -> dict:
    last = rows[-1]
    out = {
        "final_retain_loss": last.retain_loss,
        "final_forget_loss": last.forget_loss,
        "mean_surrogate_retain_loss": float(np.mean([r.surrogate_retain_loss for r in rows])),
        "mean_cos_coupling": float(np.mean([r.cos_coupling for r in rows])),
        "min_q_norm": float(min(r.q_norm for r in rows)),
        "fallback_count": float(sum(r.branch == "DegenerateFallback" for r in rows[:-1])),
    }
    ref = sub.reference_accuracies()
    if ref is not None:
        out.update({f"pre_{k}": v for k, v in pre.items()})
        out.update({f"ref_{k}": v for k, v in ref.items()})
        out["final_retain_acc"] = last.retain_acc
        out["final_forget_acc"] = last.forget_acc
        out["final_test_acc"] = last.test_acc
        out["delta_acc_toy"] = delta_acc(ref, {"retain_acc": last.retain_acc, "forget_acc": last.forget_acc,
                                               "test_acc": last.test_acc})
    return out


def delta_acc(reference: dict, current: dict) -> float:
    """Sum of absolute retain/forget/test accuracy differences, in points."""
    return float(sum(abs(reference[k] - current[k]) for k in ("retain_acc", "forget_acc", "test_acc")))


ABLATION_VARIANTS = ("full", "zero_order", "delta_only", "v_only")


def ablation_configs(base: ExperimentConfig) -> dict[str, ExperimentConfig]:
    return {
        "full": base.replace(method=Method.ROSU, components="full"),
        "zero_order": base.replace(method=Method.ROSU_ZERO_ORDER, components="full"),
        "delta_only": base.replace(method=Method.ROSU, components="delta_only"),
        "v_only": base.replace(method=Method.ROSU, components="v_only"),
    }


def run_ablation_suite(base: ExperimentConfig) -> list[RunRecord]:
    """Full method, zero-order transport, ``beta delta`` only, and ``eta v`` only (``beta = 0``)."""
    return [run(c) for c in ablation_configs(base).values()]


def coupling_diagnosis(cfg: ExperimentConfig) -> list[float]:
    if cfg.task not in BLOBS_TASKS:
        raise ConfigError("coupling diagnosis needs a Blobs task")
    return [r.cos_coupling for r in run(cfg).rows]


def sweep_configs(base: ExperimentConfig, grid: dict) -> list[ExperimentConfig]:
    """Cartesian product over ``grid`` (keys are config fields, values lists), in sorted key order."""
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("sweep grid must be a nonempty object")
    keys = sorted(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ConfigError(f"sweep grid entry {k!r} must be a nonempty list")
    base_dict = base.to_dict()
    out = []
    for values in itertools.product(*(grid[k] for k in keys)):
        d = dict(base_dict)
        d.update(zip(keys, values))
        out.append(ExperimentConfig.from_dict(d))
    return out


def sweep(base: ExperimentConfig, grid: dict) -> list[RunRecord]:
    return [run(c) for c in sweep_configs(base, grid)]


# ---------------------------------------------------------------------------
# Output


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_FIELDS)
    for r in rows:
        writer.writerow([_fmt(getattr(r, f)) for f in METRIC_FIELDS])
    return buf.getvalue()


def rows_to_jsonl(rows) -> str:
    return "".join(json.dumps(dataclasses.asdict(r), allow_nan=False) + "\n" for r in rows)


def summary_json(record: RunRecord) -> str:
    return json.dumps({"config": record.config.to_dict(), "final_summary": record.final_summary},
                      indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_text(path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc}") from exc


def write_rows(rows, path, fmt: str = "csv") -> None:
    if fmt == "csv":
        write_text(path, rows_to_csv(rows))
    elif fmt == "jsonl":
        write_text(path, rows_to_jsonl(rows))
    else:
        raise ConfigError(f"unknown output format {fmt!r}")
