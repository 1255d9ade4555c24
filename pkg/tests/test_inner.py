import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rosu.errors import DegenerateGradientError, InvalidBranchError
from rosu.inner import (
    Branch,
    PerturbationConfig,
    amplified_displacement,
    brute_force_inner_oracle,
    rosu_perturbation,
    standard_perturbation,
    subspace_perturbation,
)
from rosu.linalg import cosine_coupling, orthonormalize, subspace_project_out


def cfg(rho=1.0, tau=0.0, **kw):
    return PerturbationConfig(rho=rho, tau=tau, **kw)


@pytest.mark.parametrize("kw", [dict(rho=0.0), dict(rho=1.0, eps_q=0.0), dict(rho=1.0, tau=-1e-3),
                                dict(rho=1.0, beta=-0.1), dict(rho=1.0, eta=0.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        PerturbationConfig(**kw)


def test_defaults():
    c = PerturbationConfig(rho=0.1)
    assert c.tau == 1e-8 and c.eps_q == 1e-6


def test_standard_examples():
    s = standard_perturbation([3.0, 4.0], cfg(1.0))
    np.testing.assert_allclose(s.delta, [0.6, 0.8], rtol=1e-15)
    assert s.branch is Branch.STANDARD
    u = np.array([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(standard_perturbation(u, cfg(2.0)).delta, 2.0 * u)
    g = np.array([1.0, -2.0, 2.0])
    assert g @ standard_perturbation(g, cfg(0.3)).delta == pytest.approx(0.3 * 3.0, rel=1e-15)
    with pytest.raises(DegenerateGradientError):
        standard_perturbation([0.0, 0.0], cfg())


def test_rosu_examples():
    s = rosu_perturbation([1.0, 1.0], [1.0, 0.0], cfg(1.0))
    np.testing.assert_array_equal(s.delta, [0.0, 1.0])
    assert s.q_norm == 1.0 and s.alpha == 1.0 and s.branch is Branch.ROSU
    for rho in (0.1, 1.0, 7.0):
        f = rosu_perturbation([2.0, 0.0], [1.0, 0.0], cfg(rho))
        assert f.branch is Branch.FALLBACK and f.delta is None and f.is_fallback
    with pytest.raises(DegenerateGradientError):
        rosu_perturbation([1.0, 0.0], [0.0, 0.0], cfg())


@settings(max_examples=80)
@given(st.integers(2, 64), st.integers(0, 2**31), st.floats(0.01, 5.0))
def test_rosu_invariants(dim, seed, rho):
    rng = np.random.default_rng(seed)
    g_f, g_r = rng.standard_normal(dim), rng.standard_normal(dim)
    s = rosu_perturbation(g_f, g_r, cfg(rho))
    assert np.linalg.norm(s.delta) == pytest.approx(rho, rel=1e-10)
    assert abs(g_r @ s.delta) <= 1e-10 * np.linalg.norm(g_r) * rho
    assert g_f @ s.delta == pytest.approx(rho * s.q_norm, rel=1e-9)
    assert s.alpha == pytest.approx(rho / s.q_norm, rel=1e-15)
    np.testing.assert_allclose(s.delta, rho * s.unit_dir, rtol=0, atol=1e-15 * rho)


@settings(max_examples=40)
@given(st.integers(2, 32), st.integers(0, 2**31))
def test_tradeoff_and_gap_identities(dim, seed):
    rng = np.random.default_rng(seed)
    g_f, g_r = rng.standard_normal(dim), rng.standard_normal(dim)
    rho = 0.7
    r = rosu_perturbation(g_f, g_r, cfg(rho))
    s = standard_perturbation(g_f, cfg(rho))
    c = cosine_coupling(g_f, g_r)
    sin = math.sqrt(max(0.0, 1.0 - c * c))
    assert (g_f @ r.delta) / (g_f @ s.delta) == pytest.approx(sin, abs=1e-9)
    gap = np.linalg.norm(r.delta - s.delta)
    assert gap == pytest.approx(rho * math.sqrt(2 * (1 - sin)), rel=1e-9)
    assert gap <= math.sqrt(2) * rho * abs(c) + 1e-12


def test_orthogonal_gradients_tie():
    g_f, g_r = np.array([0.0, 2.0, 0.0]), np.array([1.0, 0.0, 0.0])
    r = rosu_perturbation(g_f, g_r, cfg(0.5))
    s = standard_perturbation(g_f, cfg(0.5))
    np.testing.assert_allclose(r.delta, s.delta, atol=1e-16)
    best, _ = brute_force_inner_oracle(g_f, g_r, 0.5, 2000, 0)
    assert best == pytest.approx(0.5 * 2.0, rel=1e-12)


def test_uniqueness_probe():
    rng = np.random.default_rng(42)
    for _ in range(50):
        dim = int(rng.integers(3, 20))
        g_f, g_r = rng.standard_normal(dim), rng.standard_normal(dim)
        rho = 1.0
        s = rosu_perturbation(g_f, g_r, cfg(rho))
        best = g_f @ s.delta
        for _ in range(5):
            t = rng.standard_normal(dim)
            t -= (t @ g_r) / (g_r @ g_r) * g_r
            t -= (t @ s.unit_dir) * s.unit_dir
            t *= 1e-3 * rho / np.linalg.norm(t)
            d = s.delta + t
            d -= (d @ g_r) / (g_r @ g_r) * g_r
            d *= rho / np.linalg.norm(d)
            assert g_f @ d < best


def test_subspace_examples():
    rng = np.random.default_rng(1)
    g_f, g_r = rng.standard_normal(9), rng.standard_normal(9)
    a = subspace_perturbation(g_f, orthonormalize([g_r]), cfg(0.4))
    b = rosu_perturbation(g_f, g_r, cfg(0.4))
    assert a.branch is Branch.SUBSPACE
    np.testing.assert_allclose(a.delta, b.delta, rtol=0, atol=1e-12)
    spanning = orthonormalize([g_f, g_r])
    assert subspace_perturbation(g_f, spanning, cfg()).branch is Branch.FALLBACK


@settings(max_examples=40)
@given(st.integers(4, 24), st.integers(0, 2**31))
def test_subspace_orthogonality_and_nesting(dim, seed):
    rng = np.random.default_rng(seed)
    g_f = rng.standard_normal(dim)
    raw = list(rng.standard_normal((3, dim)))
    b1, b2 = orthonormalize(raw[:1]), orthonormalize(raw)
    rho = 0.3
    s2 = subspace_perturbation(g_f, b2, cfg(rho))
    assert np.abs(b2.columns.T @ s2.delta).max() <= 1e-9 * rho
    gain1 = rho * np.linalg.norm(subspace_project_out(b1, g_f))
    assert g_f @ s2.delta <= gain1 + 1e-12


def test_amplified_displacement():
    s = rosu_perturbation([1.0, 1.0], [1.0, 0.0], cfg(1.0))
    np.testing.assert_array_equal(amplified_displacement(s, cfg(beta=0.0)), [0.0, 0.0])
    np.testing.assert_array_equal(amplified_displacement(s, cfg(beta=2.0)), [0.0, 2.0])
    rng = np.random.default_rng(3)
    g_f, g_r = rng.standard_normal(12), rng.standard_normal(12)
    s = rosu_perturbation(g_f, g_r, cfg(0.2))
    amp = amplified_displacement(s, cfg(0.2, beta=1.7))
    assert g_f @ amp == pytest.approx(1.7 * 0.2 * s.q_norm, rel=1e-9)
    assert abs(g_r @ amp) <= 1e-10 * 1.7 * 0.2 * np.linalg.norm(g_r)
    fallback = rosu_perturbation([2.0, 0.0], [1.0, 0.0], cfg())
    with pytest.raises(InvalidBranchError):
        amplified_displacement(fallback, cfg(beta=1.0))
    with pytest.raises(InvalidBranchError):
        amplified_displacement(standard_perturbation([1.0, 0.0], cfg()), cfg(beta=1.0))


def test_oracle_dim2_is_exact():
    rng = np.random.default_rng(0)
    for _ in range(20):
        g_f, g_r = rng.standard_normal(2), rng.standard_normal(2)
        s = rosu_perturbation(g_f, g_r, cfg(0.8))
        best, _, sampled = brute_force_inner_oracle(g_f, g_r, 0.8, 1000, 1, return_sampled=True)
        assert best == pytest.approx(0.8 * s.q_norm, rel=1e-12)
        assert sampled <= best * (1 + 1e-12)


@pytest.mark.parametrize("dim", [3, 5, 8, 12, 16])
def test_oracle_is_close_and_never_beats_closed_form(dim):
    rng = np.random.default_rng(dim)
    g_f, g_r = rng.standard_normal(dim), rng.standard_normal(dim)
    s = rosu_perturbation(g_f, g_r, cfg(1.0))
    closed = g_f @ s.delta
    best, _, sampled = brute_force_inner_oracle(g_f, g_r, 1.0, 100_000, 7, return_sampled=True)
    assert sampled <= closed * (1 + 1e-12)
    assert closed - 1e-2 * s.q_norm <= best <= closed * (1 + 1e-12)


def test_sampled_gap_shrinks_with_samples():
    rng = np.random.default_rng(4)
    g_f, g_r = rng.standard_normal(5), rng.standard_normal(5)
    closed = rosu_perturbation(g_f, g_r, cfg(1.0)).q_norm
    gaps = [closed - brute_force_inner_oracle(g_f, g_r, 1.0, n, 3, return_sampled=True)[2]
            for n in (1000, 10_000, 100_000)]
    assert gaps[0] >= gaps[1] >= gaps[2] >= 0.0
    assert gaps[2] <= 1e-2 * closed


def test_oracle_rejects_bad_input():
    with pytest.raises(DegenerateGradientError):
        brute_force_inner_oracle([1.0, 0.0], [0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        brute_force_inner_oracle([1.0, 0.0], [0.0, 1.0], 1.0, n_samples=10)


def test_fallback_bounds_the_feasible_gain():
    eps_q = 1e-6
    g_r = np.array([1.0, 0.0, 0.0])
    g_f = np.array([3.0, 4e-7, 0.0])
    for tau in (0.0, 1e-8, 1e-7):
        s = rosu_perturbation(g_f, g_r, cfg(0.5, tau=tau, eps_q=eps_q))
        assert s.is_fallback
        best, _ = brute_force_inner_oracle(g_f, g_r, 0.5, 5000, 0)
        bound = 0.5 * (eps_q + tau * np.linalg.norm(g_f) / (g_r @ g_r + tau))
        assert best <= bound
