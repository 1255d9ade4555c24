"""Acceptance criteria 1-12.  Each test reports one PASS/FAIL line (see conftest) before asserting."""

import json
import subprocess
import sys
import time
from collections import defaultdict

import numpy as np
import pytest

from rosu import audit as A
from rosu import experiments as ex

pytestmark = pytest.mark.acceptance

SEED = 0
TIMINGS: dict[str, float] = {}


def _timed(name, fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    TIMINGS[name] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="module")
def registry():
    """The full-scale audit registry, run part by part so each part is timed."""
    s = A.FULL_SCALE
    thetas, rhos = A.theta_grid(s.theta_points), A.rho_grid(s.rho_points)
    recs = []
    recs += _timed("inner", A.audit_inner_optimality, s.inner, SEED, n_samples=s.inner_samples)
    recs += _timed("partial_restore", A.audit_partial_restore, s.partial_restore, SEED)
    recs += _timed("retain_damage", A.audit_retain_damage, thetas, rhos, SEED)
    recs += _timed("tradeoff", A.audit_tradeoff_and_gap, thetas, SEED)
    recs += _timed("regularization", A.audit_regularization_lemmas, s.regularization, SEED)
    recs += _timed("exact", A.audit_exact_gradient, s.exact_gradient, SEED)
    recs += _timed("relaxed", A.audit_relaxed_gradient, s.relaxed_gradient, SEED)
    recs += _timed("subspace", A.audit_subspace, s.subspace, seed=SEED)

    def transfer():
        pair, w = A.transfer_checkpoint(SEED)
        sizes = [16, 64, 256, pair.retain.n]
        audits = A.audit_minibatch_transfer(pair, w, sizes, s.transfer_pairs, SEED)
        return audits, A.transfer_records(audits, pair.retain.n, SEED)

    audits, trecs = _timed("transfer", transfer)
    recs += trecs
    by = defaultdict(list)
    for r in recs:
        by[r.claim_id].append(r)
    return by, audits


def _tally(by, *claims):
    rs = [r for c in claims for r in by[c]]
    return sum(r.passed for r in rs), len(rs)


def _worst(by, claim):
    return max((-r.margin if A.CLAIMS[claim].kind is not A.ClaimKind.IDENTITY else r.margin) for r in by[claim])


def test_criterion_01_inner_optimality(registry, acceptance):
    by, _ = registry
    value = _tally(by, "prop-inner-value")
    oracle = _tally(by, "prop-inner-oracle")
    skipped = len(by["prop-inner-skipped"])
    n = value[1] + skipped
    rt = TIMINGS["inner"]
    ok = value[0] == value[1] and oracle[0] == oracle[1] and n == 1000 and rt < 60
    acceptance(1, ok, f"inner optimality: value {value[0]}/{value[1]}, oracle {oracle[0]}/{oracle[1]}, "
                      f"skipped {skipped}, 1e5 samples each, {rt:.1f}s (<60s)")
    assert ok


def test_criterion_02_tradeoff_and_gap(registry, acceptance):
    by, _ = registry
    parts = {c: _tally(by, c) for c in ("prop-tradeoff-ratio", "prop-gap-identity", "prop-gap-eps-bound")}
    ok = all(p == t == 50 for p, t in parts.values())
    acceptance(2, ok, "trade-off/gap over 50 angles: " + ", ".join(f"{c} {p}/{t}" for c, (p, t) in parts.items())
               + f"; worst ratio error {_worst(by, 'prop-tradeoff-ratio'):.1e}")
    assert ok


def test_criterion_03_retain_damage(registry, acceptance):
    by, _ = registry
    i = _tally(by, "thm-retain-damage-i")
    cor = _tally(by, "cor-positive-alignment")
    ok = i == (500, 500) and cor[0] == cor[1] and cor[1] > 0
    acceptance(3, ok, f"retain damage (i) {i[0]}/{i[1]} on 50x10 grid; positive alignment {cor[0]}/{cor[1]} "
                      "triggered points strictly improved")
    assert ok


def test_criterion_04_exact_gradient_fd(registry, acceptance):
    by, _ = registry
    p, t = _tally(by, "prop-exact-fd")
    worst = max(r.measured for r in by["prop-exact-fd"])
    ok = p == t == 50
    acceptance(4, ok, f"exact outer gradient vs central FD: {p}/{t}, worst relative error {worst:.1e} (<=1e-5)")
    assert ok


def test_criterion_05_approx_grad_bound(registry, acceptance):
    by, _ = registry
    jac = _tally(by, "prop-approx-grad-jacobian")
    grad = _tally(by, "prop-approx-grad-gradient")
    ident = by["prop-approx-grad-identity-case"]
    ident_max = max(r.measured for r in ident)
    ok = jac == (200, 200) and grad == (200, 200) and ident and ident_max <= 1e-10
    acceptance(5, ok, f"relaxed deviation bound: Jacobian {jac[0]}/{jac[1]}, gradient {grad[0]}/{grad[1]}, "
                      f"identity+linear case max deviation {ident_max:.1e} (<=1e-10)")
    assert ok


def test_criterion_06_regularization_lemmas(registry, acceptance):
    by, _ = registry
    claims = ("lem-regproj-gap", "lem-regproj-q", "lem-reg-relaxed-jac-equality", "lem-reg-relaxed-jac-bound",
              "lem-qsmall", "lem-reg-qsmall")
    parts = {c: _tally(by, c) for c in claims}
    ok = all(p == t and t > 0 for p, t in parts.values())
    acceptance(6, ok, "regularization lemmas: " + ", ".join(f"{c} {p}/{t}" for c, (p, t) in parts.items()))
    assert ok


def test_criterion_07_minibatch_transfer(registry, acceptance):
    by, audits = registry
    per = _tally(by, "eq-mini-full-transfer")
    trend = _tally(by, "eq-eps-orth-median-trend")
    full = _tally(by, "eq-eps-orth-full-batch")
    medians = ", ".join(f"{a.batch_size}:{a.median:.3f}" for a in audits)
    rt = TIMINGS["transfer"]
    enough = all(len(a.eps_orth_samples) + a.skipped == 100 for a in audits) and len(audits) == 4
    ok = per[0] == per[1] and trend[0] == trend[1] == 3 and full[0] == full[1] == 1 and enough and rt < 120
    acceptance(7, ok, f"mini-batch transfer: per-sample {per[0]}/{per[1]}, medians {{{medians}}} "
                      f"nonincreasing within 10% {trend[0]}/{trend[1]}, {rt:.1f}s (<120s)")
    assert ok


def test_criterion_08_subspace(registry, acceptance):
    by, _ = registry
    claims = ("prop-subspace-orthogonality", "prop-subspace-retain-bound", "prop-subspace-special-case",
              "prop-subspace-nested")
    parts = {c: _tally(by, c) for c in claims}
    ok = all(p == t and t >= 500 for p, t in parts.values())
    acceptance(8, ok, "subspace extension: " + ", ".join(f"{c} {p}/{t}" for c, (p, t) in parts.items()))
    assert ok


POSITIVE_COUPLING = ex.ExperimentConfig(task="CoupledQuadratic", target_cos=0.9, steps=200, rho=0.1, eta=0.001,
                                        seed=SEED)


def test_criterion_09_positive_coupling(acceptance):
    def both():
        return (ex.run(POSITIVE_COUPLING.replace(method="Rosu")),
                ex.run(POSITIVE_COUPLING.replace(method="StandardMinMax")))

    rosu, std = _timed("criterion9", both)
    a = np.array([r.surrogate_retain_loss for r in rosu.rows])
    b = np.array([r.surrogate_retain_loss for r in std.rows])
    every = bool(np.all(a < b))
    ok = every and a.mean() < b.mean()
    acceptance(9, ok, f"cos=0.9 quadratic, 200 steps: ROSU surrogate below StandardMinMax on "
                      f"{int(np.sum(a < b))}/{a.size} steps; means {a.mean():.6f} < {b.mean():.6f}")
    assert ok


ABLATION_BASE = ex.ExperimentConfig(task="BlobsRandom", steps=300, rho=0.5, eta=0.01, beta_schedule=0.02,
                                    seed=SEED)


def test_criterion_10_ablation_directions(acceptance):
    recs = _timed("criterion10", ex.run_ablation_suite, ABLATION_BASE)
    s = {name: rec.final_summary for name, rec in zip(ex.ABLATION_VARIANTS, recs)}
    full, v_only, d_only = s["full"], s["v_only"], s["delta_only"]
    fa_v = abs(v_only["final_forget_acc"] - v_only["pre_forget_acc"])
    ra_gap = full["final_retain_acc"] - d_only["final_retain_acc"]
    fa_ref = abs(full["final_forget_acc"] - full["ref_forget_acc"])
    ra_ref = abs(full["final_retain_acc"] - full["ref_retain_acc"])
    ok = fa_v <= 2 and ra_gap >= 10 and fa_ref <= 5 and ra_ref <= 2
    acceptance(10, ok, f"BlobsRandom ablations (seed {SEED}): |FA_v-only - FA_pre| {fa_v:.2f} (<=2), "
                       f"RA_full - RA_delta-only {ra_gap:.2f} (>=10), |FA_full - FA_ref| {fa_ref:.2f} (<=5), "
                       f"|RA_full - RA_ref| {ra_ref:.2f} (<=2)")
    assert ok


def _cli(*args):
    return subprocess.run([sys.executable, "-m", "rosu.cli", *args], capture_output=True, text=True)


def test_criterion_11_reproducibility(tmp_path, acceptance):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(ABLATION_BASE.replace(steps=50).to_dict()))

    def twice():
        outs = []
        for k in range(2):
            out = tmp_path / f"out{k}"
            codes = [_cli("run", "--config", str(cfg), "--format", fmt, "--out", str(out / fmt)).returncode
                     for fmt in ("csv", "jsonl")]
            codes.append(_cli("audit", "--quick", "--seed", "3", "--out", str(out / "audit")).returncode)
            outs.append((out, codes))
        return outs

    (a, ca), (b, cb) = _timed("criterion11", twice)
    files = ["csv/run.csv", "csv/summary.json", "jsonl/run.jsonl", "audit/audit_report.jsonl"]
    same = [(a / f).read_bytes() == (b / f).read_bytes() for f in files]
    ok = ca == cb == [0, 0, 0] and all(same)
    acceptance(11, ok, f"two CLI invocations, byte-identical: {sum(same)}/{len(files)} files "
                       f"({', '.join(files)})")
    assert ok


def test_criterion_12_runtime_budget(tmp_path, acceptance):
    t0 = time.perf_counter()
    proc = _cli("audit", "--seed", str(SEED), "--out", str(tmp_path))
    audit_time = time.perf_counter() - t0
    others = sum(TIMINGS.get(k, 0.0) for k in ("criterion9", "criterion10", "criterion11"))
    total = audit_time + others
    ok = proc.returncode == 0 and total < 600
    acceptance(12, ok, f"`rosu audit` (full) {audit_time:.1f}s + criteria 9-11 runs {others:.1f}s = "
                       f"{total:.1f}s (<600s), audit exit {proc.returncode}")
    assert ok
