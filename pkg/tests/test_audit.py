import json
import math

import numpy as np
import pytest

from rosu import audit as A
from rosu.errors import ReportIOError
from rosu.linalg import Rank1Projector, project_out
from rosu.objectives import QuadraticObjective, random_spd


# ---------------------------------------------------------------- records


def test_record_semantics():
    up = A.record("thm-retain-damage-i", 3, 0.5, 1.0)
    assert up.passed and up.margin == 0.5 and up.instance_seed == 3
    assert not A.record("thm-retain-damage-i", 0, 1.1, 1.0).passed
    assert A.record("thm-retain-damage-i", 0, 1.0 + 1e-10, 1.0).passed  # inside tolerance
    low = A.record("thm-retain-damage-ii", 0, 2.0, 1.0)
    assert low.passed and low.margin == 1.0
    ident = A.record("prop-tradeoff-ratio", 0, 0.5 + 2e-9, 0.5)
    assert not ident.passed and ident.margin == pytest.approx(2e-9)
    assert not A.record("cor-positive-alignment", 0, 1.0, 1.0).passed  # strict
    assert A.record("cor-positive-alignment", 0, 0.9, 1.0).passed
    with pytest.raises(KeyError):
        A.record("no-such-claim", 0, 0.0, 0.0)


def test_every_claim_has_one_citation():
    citations = {c.citation for c in A.CLAIMS.values()}
    required = {"Prop. inner", "Thm. retain-damage (i)", "Thm. retain-damage (ii)", "Cor. positive-alignment",
                "Prop. tradeoff", "Prop. gap", "Prop. exact", "Lemma relaxed", "Prop. approx-grad",
                "Prop. subspace", "Prop. partial-restore (i)", "Lemma regproj", "Lemma qsmall",
                "Lemma reg-relaxed-jac", "Lemma reg-qsmall", "Eq. mini-full-transfer", "Eq. eps-orth"}
    assert required <= citations
    for claim in A.CLAIMS.values():
        assert isinstance(claim.citation, str) and claim.citation


# ---------------------------------------------------------------- report io


def test_emit_report_empty(tmp_path):
    path = tmp_path / "r.jsonl"
    A.emit_report([], path)
    lines = path.read_text().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0]) == {"summary": {}, "n_records": 0, "all_passed": True}


def test_emit_report_roundtrip(tmp_path):
    recs = [A.record("thm-retain-damage-i", 1, 0.1, 0.2, "a"),
            A.record("thm-retain-damage-i", 2, 0.3, 0.2, "b"),
            A.record("prop-gap-identity", 3, 1.0, 1.0)]
    path = tmp_path / "r.jsonl"
    A.emit_report(recs, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    assert set(json.loads(lines[0])) == {"claim_id", "instance_seed", "measured", "bound_or_target",
                                         "margin", "passed", "notes"}
    back, summary = A.read_report(path)
    assert back == recs
    assert summary["summary"]["thm-retain-damage-i"] == {"passed": 1, "total": 2}
    assert summary["all_passed"] is False


def test_emit_report_unwritable(tmp_path):
    with pytest.raises(ReportIOError):
        A.emit_report([], tmp_path / "missing-dir" / "r.jsonl")
    assert issubclass(ReportIOError, OSError)


def test_registry_is_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    A.emit_report(A.run_registry(3, A.QUICK_SCALE), a)
    A.emit_report(A.run_registry(3, A.QUICK_SCALE), b)
    assert a.read_bytes() == b.read_bytes()
    _, summary = A.read_report(a)
    assert summary["all_passed"]
    assert set(summary["summary"]) <= set(A.CLAIMS)


# ---------------------------------------------------------------- individual audits


def test_inner_audit_small():
    recs = A.audit_inner_optimality(20, seed=1, dim_range=(2, 8), n_samples=2000)
    assert all(r.passed for r in recs)
    assert {r.claim_id for r in recs} >= {"prop-inner-value", "prop-inner-oracle"}


def test_tradeoff_examples():
    recs = A.audit_tradeoff_and_gap([math.pi / 2, math.pi / 4, math.acos(0.1)], seed=0, rho=0.5)
    by = {}
    for r in recs:
        by.setdefault(r.claim_id, []).append(r)
    half, quarter, tenth = by["prop-tradeoff-ratio"]
    assert half.measured == pytest.approx(1.0, abs=1e-9)
    assert quarter.measured == pytest.approx(math.sqrt(2) / 2, abs=1e-9)
    assert quarter.bound_or_target == pytest.approx(0.7071067811, abs=1e-10)
    assert by["prop-gap-identity"][0].measured == pytest.approx(0.0, abs=1e-8)
    assert by["prop-gap-eps-bound"][2].measured <= math.sqrt(2) * 0.5 * 0.1 + 1e-9
    assert all(r.passed for r in recs)


def test_retain_damage_orthogonal_case():
    recs = A.audit_retain_damage([math.pi / 2], [0.1, 0.5], seed=0)
    ii = [r for r in recs if r.claim_id == "thm-retain-damage-ii"]
    assert all(r.bound_or_target <= 0 and "consistent" in r.notes for r in ii)
    assert not any(r.claim_id == "cor-positive-alignment" for r in recs)  # cos ~ 0 never triggers


def test_retain_damage_positive_alignment_triggers():
    recs = A.audit_retain_damage([math.acos(0.9)], [0.01, 0.05], seed=0)
    cor = [r for r in recs if r.claim_id == "cor-positive-alignment"]
    assert len(cor) == 2 and all(r.passed for r in cor)
    assert all(r.passed for r in recs)


def test_retain_damage_validates_grid():
    with pytest.raises(ValueError):
        A.audit_retain_damage([], [0.1])
    with pytest.raises(ValueError):
        A.audit_retain_damage([math.pi], [0.1])


def test_regularization_examples():
    g_r = np.array([1.0, 0.0])
    g_f = np.array([0.6, 0.8])
    gap = np.linalg.norm(project_out(Rank1Projector(g_r, 1.0), g_f) - project_out(Rank1Projector(g_r), g_f))
    assert gap <= 0.5
    recs = A.audit_regularization_lemmas(6, seed=2)
    assert all(r.passed for r in recs)
    tau0 = [r for r in recs if r.claim_id == "lem-regproj-gap" and r.notes.startswith("tau=0.0 ")]
    assert tau0 and all(r.measured == 0.0 for r in tau0)


def test_exact_and_relaxed_audits_small():
    assert all(r.passed for r in A.audit_exact_gradient(3, seed=4))
    recs = A.audit_relaxed_gradient(4, seed=4, n_identity_cases=2)
    ident = [r for r in recs if r.claim_id == "prop-approx-grad-identity-case"]
    assert len(ident) == 2 and all(r.measured <= 1e-10 for r in ident)
    assert all(r.passed for r in recs)


def test_subspace_and_partial_restore_small():
    assert all(r.passed for r in A.audit_subspace(20, seed=5))
    assert all(r.passed for r in A.audit_partial_restore(10, seed=5))


def test_smoothness_estimate_matches_spectrum():
    rng = np.random.default_rng(0)
    q = QuadraticObjective(random_spd(12, rng), rng.standard_normal(12))
    est = A.quadratic_smoothness(q, np.zeros(12), np.ones(12))
    assert est.m_r == pytest.approx(np.linalg.eigvalsh(q.A)[-1], abs=1e-8)
    ends = max(np.linalg.norm(q.grad(np.zeros(12))), np.linalg.norm(q.grad(np.ones(12))))
    assert est.g_lip == pytest.approx(ends, rel=1e-12)  # convex along the segment


def test_transfer_audit_properties():
    pair, w = A.transfer_checkpoint(0)
    n = pair.retain.n
    audits = A.audit_minibatch_transfer(pair, w, [16, n], n_pairs=100, seed=0)
    assert all(a.holds() for a in audits)
    assert max(audits[1].eps_orth_samples) <= 1e-10
    assert audits[1].median <= audits[0].median
    recs = A.transfer_records(audits, n, 0)
    assert {r.claim_id for r in recs} == {"eq-mini-full-transfer", "eq-eps-orth-full-batch",
                                          "eq-eps-orth-median-trend"}
    with pytest.raises(ValueError):
        A.audit_minibatch_transfer(pair, w, [16], n_pairs=50)
    with pytest.raises(ValueError):
        A.audit_minibatch_transfer(pair, w, [n + 1])


def test_grids():
    g = A.theta_grid(50)
    assert len(g) == 50 and 0 < min(g) and max(g) < math.pi
    r = A.rho_grid(10)
    assert len(r) == 10 and r[0] == pytest.approx(0.01) and r[-1] == pytest.approx(2.0)
