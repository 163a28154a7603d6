import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from dpfair import fairpost as fp
from dpfair.accountant import PrivacyBudget
from dpfair.data import DataError, GroupedDataset
from dpfair.model import LogisticModel
from dpfair.verify import err_star_flip_lp

unit = st.floats(0, 1)


def _const(v):
    return lambda X: np.full(len(X), v, dtype=int)


def _ds(n, a=0, d=2, seed=0):
    rng = np.random.default_rng(seed)
    return GroupedDataset.from_arrays(rng.normal(size=(n, d)), np.full(n, a), np.zeros(n, int))


# -- rates ----------------------------------------------------------------------------


def test_estimate_rates_examples():
    D0, D1 = _ds(10), _ds(10, a=1)
    r = fp.estimate_rates(_const(1), _const(0), D0, D1)
    assert (r.alpha_bar, r.beta_bar) == (1.0, 0.0)
    labels = np.array([1, 0, 0, 1, 0, 0, 1, 0, 0, 0])
    r = fp.estimate_rates(lambda X: labels[: len(X)], _const(0), D0, D1)
    assert r.alpha_bar == pytest.approx(0.3)


def test_estimate_rates_matches_counting(rng):
    m0 = LogisticModel(rng.normal(size=2), 0.1)
    m1 = LogisticModel(rng.normal(size=2), -0.2)
    D0, D1 = _ds(500, 0, seed=1), _ds(400, 1, seed=2)
    r = fp.estimate_rates(m0, m1, D0, D1)
    count0 = sum(int(1 / (1 + math.exp(-(x @ m0.weights + m0.bias))) >= 0.5) for x in D0.X)
    assert r.alpha_bar == count0 / 500


def test_estimate_rates_empty_group():
    with pytest.raises(DataError):
        fp.estimate_rates(_const(1), _const(1), _ds(3), _ds(0, 1))


def test_projection_examples():
    assert fp.project_unit(0.6 + 0.5) == 1.0
    assert fp.project_unit(0.6 - 0.7) == 0.0


def test_privatize_draw_order_and_scale():
    r = fp.RateEstimates(0.6, 0.2, 1000, 500)
    priv = fp.privatize_rates(r, 0.05, 0.1, np.random.Generator(np.random.PCG64(3)))
    g = np.random.Generator(np.random.PCG64(3))
    l0, l1 = g.laplace(0, 0.02), g.laplace(0, 0.02)
    assert priv.laplace_draws == (l0, l1)
    assert priv.scales == pytest.approx((0.02, 0.02))
    assert priv.alpha_tilde == fp.project_unit(0.6 + l0)


def test_laplace_mean_abs_scale():
    rng = np.random.Generator(np.random.PCG64(5))
    r = fp.RateEstimates(0.6, 0.2, 1000, 1000)
    draws = [fp.privatize_rates(r, 0.05, 0.05, rng).laplace_draws[0] for _ in range(100_000)]
    assert abs(np.mean(np.abs(draws)) / 0.02 - 1) < 0.02


@settings(max_examples=300)
@given(a=unit, b=unit, seed=st.integers(0, 2**32), n=st.integers(1, 5000))
def test_privatization_deviation_bound(a, b, seed, n):
    priv = fp.privatize_rates(fp.RateEstimates(a, b, n, n), 0.05, 0.05, np.random.Generator(np.random.PCG64(seed)))
    d0, d1 = priv.deviations
    assert abs(d0) <= abs(priv.laplace_draws[0]) + 1e-15
    assert abs(d1) <= abs(priv.laplace_draws[1]) + 1e-15
    assert 0 <= priv.alpha_tilde <= 1 and 0 <= priv.beta_tilde <= 1


# -- parameters and closed forms ------------------------------------------------------


def test_build_params_examples():
    p = fp.build_params(0.6, 0.2)
    assert p.branch == fp.ALPHA_GE_BETA
    assert p.keep_threshold == pytest.approx(2 / 3, abs=1e-15)
    assert p.promote_threshold == pytest.approx(0.25, abs=1e-15)
    p = fp.build_params(0.5, 0.5)
    assert (p.keep_threshold, p.promote_threshold) == (1.0, 0.0)
    p = fp.build_params(0.0, 0.0)
    assert (p.keep_threshold, p.promote_threshold) == (1.0, 0.0)
    p = fp.build_params(1.0, 1.0)
    assert (p.keep_threshold, p.promote_threshold) == (1.0, 0.0)
    with pytest.raises(ValueError):
        fp.build_params(1.2, 0.3)


def test_acceptance_examples():
    exact = fp.build_params(0.6, 0.2)
    assert fp.acceptance_rates(exact, 0.6, 0.2) == pytest.approx((0.4, 0.4), abs=1e-15)
    assert fp.analytic_sp_gap(exact, 0.6, 0.2) <= 1e-15
    noisy = fp.build_params(0.7, 0.2)
    r0, r1 = fp.acceptance_rates(noisy, 0.6, 0.2)
    assert r0 == pytest.approx(0.6 * 0.9 / 1.4, abs=1e-15)
    assert r0 == pytest.approx(0.385714, abs=1e-6)
    assert r1 == pytest.approx(0.45, abs=1e-15)
    same = fp.build_params(0.3, 0.3)
    assert fp.acceptance_rates(same, 0.6, 0.2) == (0.6, 0.2)


def test_change_examples():
    exact = fp.build_params(0.6, 0.2)
    c0, c1 = fp.prediction_change_rates(exact, 0.6, 0.2)
    assert (c0, c1) == pytest.approx((0.2, 0.2), abs=1e-15)
    assert fp.prediction_change_rates(fp.build_params(0.4, 0.4), 0.4, 0.4) == (0.0, 0.0)
    c0, c1 = fp.prediction_change_rates(fp.build_params(0.7, 0.2), 0.6, 0.2)
    assert c0 == pytest.approx(0.214286, abs=1e-6) and c1 == pytest.approx(0.25, abs=1e-15)


def test_prop1_and_err_star_examples():
    assert fp.prop1_lower_bound(0.6, 0.2, 0) == pytest.approx(0.4)
    assert fp.prop1_lower_bound(0.5, 0.5, 0.1) == pytest.approx(-0.1)
    assert fp.prop1_lower_bound(0.9, 0.1, 0.3) == pytest.approx(0.5)
    assert fp.err_star(0.6, 0.2, 0.4) == 0.0
    for triple, expected in (((0.6, 0.2, 0.0), 0.4), ((0.8, 0.1, 0.2), 0.5)):
        assert fp.err_star(*triple) == pytest.approx(expected)
        assert err_star_flip_lp(*triple) == pytest.approx(expected, abs=1e-9)


@settings(max_examples=500)
@given(a=unit, b=unit)
def test_theorem1_identities(a, b):
    p = fp.build_params(a, b)
    assert 0 <= p.keep_threshold <= 1 and 0 <= p.promote_threshold <= 1
    assert fp.analytic_sp_gap(p, a, b) <= 1e-12
    assert abs(sum(fp.prediction_change_rates(p, a, b)) - abs(a - b)) <= 1e-12


@settings(max_examples=300)
@given(a=unit, b=unit)
def test_branch_symmetry(a, b):
    assume(a < b)
    p, q = fp.build_params(a, b), fp.build_params(b, a)
    assert p.branch == fp.ALPHA_LT_BETA and q.branch == fp.ALPHA_GE_BETA
    assert (p.keep_threshold, p.promote_threshold) == (q.keep_threshold, q.promote_threshold)
    assert p.high_group == 1 and q.high_group == 0
    r = fp.acceptance_rates(p, a, b)
    s = fp.acceptance_rates(q, b, a)
    assert r == pytest.approx(s[::-1], abs=1e-15)


@settings(max_examples=300)
@given(a=unit, b=unit, g=unit)
def test_err_star_dominates_prop1(a, b, g):
    e, lb = fp.err_star(a, b, g), fp.prop1_lower_bound(a, b, g)
    assert e >= lb
    if abs(a - b) >= g:
        assert e == pytest.approx(lb, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(a=unit, b=unit, g=st.floats(0, 0.5))
def test_err_star_matches_flip_lp(a, b, g):
    assert fp.err_star(a, b, g) == pytest.approx(err_star_flip_lp(a, b, g), abs=1e-8)


# -- prediction -----------------------------------------------------------------------


def _fc(alpha, beta, policy=None):
    return fp.FairClassifier(LogisticModel.zeros(2), LogisticModel.zeros(2), fp.build_params(alpha, beta),
                             policy or fp.RandomnessPolicy())


def test_case_table():
    p = fp.build_params(0.6, 0.2)
    s = np.linspace(0, 1, 101)
    # base 0 in the high group stays 0, base 1 in the low group stays 1
    assert not fp.apply_postprocessing(p, np.zeros(101), np.zeros(101), s).any()
    assert fp.apply_postprocessing(p, np.ones(101), np.ones(101), s).all()
    # boundary s == threshold keeps/promotes
    assert fp.apply_postprocessing(p, [1], [0], np.array([p.keep_threshold]))[0] == 1
    assert fp.apply_postprocessing(p, [0], [1], np.array([p.promote_threshold]))[0] == 1


def test_monte_carlo_acceptance_rates():
    rng = np.random.Generator(np.random.PCG64(21))
    n = 1_000_000
    for alpha, beta, est in ((0.6, 0.2, (0.6, 0.2)), (0.6, 0.2, (0.7, 0.2)), (0.15, 0.55, (0.1, 0.6))):
        p = fp.build_params(*est)
        expected = fp.acceptance_rates(p, alpha, beta)
        for g, rate in ((0, alpha), (1, beta)):
            base = (rng.random(n) < rate).astype(int)
            out = fp.apply_postprocessing(p, base, np.full(n, g), rng.random(n))
            sd = math.sqrt(expected[g] * (1 - expected[g]) / n)
            assert abs(out.mean() - expected[g]) <= 3 * sd


def test_fair_predict_scalar_and_errors():
    fc = _fc(0.6, 0.2)
    rng = np.random.Generator(np.random.PCG64(0))
    # zero model: base output 1, high group keeps it with probability 2/3
    vals = [fp.fair_predict(fc, np.zeros(2), 0, rng) for _ in range(3000)]
    assert set(vals) == {0, 1}
    assert abs(np.mean(vals) - 2 / 3) < 3 * math.sqrt(2 / 9 / 3000)
    with pytest.raises(ValueError):
        fp.fair_predict(fc, np.zeros(2), 2)


def test_hash_mode_repeatable():
    fc = _fc(0.6, 0.2, fp.RandomnessPolicy("hash", salt="s"))
    X = np.random.default_rng(0).normal(size=(500, 2))
    a = np.arange(500) % 2
    assert np.array_equal(fc.predict(X, a), fc.predict(X, a))
    other = _fc(0.6, 0.2, fp.RandomnessPolicy("hash", salt="t"))
    assert not np.array_equal(fc.uniforms(X, a), other.uniforms(X, a))
    u = fc.uniforms(X, a)
    assert 0 <= u.min() and u.max() < 1


def test_fresh_mode_seeded():
    X = np.zeros((1000, 2))
    a = np.zeros(1000, int)
    r1 = _fc(0.6, 0.2).predict(X, a, np.random.Generator(np.random.PCG64(1)))
    r2 = _fc(0.6, 0.2).predict(X, a, np.random.Generator(np.random.PCG64(1)))
    assert np.array_equal(r1, r2)
    with pytest.raises(ValueError):
        fp.RandomnessPolicy("sometimes")


def test_sp_gap_examples():
    a = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    assert fp.sp_gap(np.ones(8), a) == 0.0
    assert fp.sp_gap(a, a) == 1.0
    assert fp.sp_gap(np.array([1, 1, 1, 0, 1, 1, 0, 0]), a) == 0.25
    ds = GroupedDataset.from_arrays(np.zeros((8, 1)), a, np.zeros(8, int))
    assert fp.sp_gap_empirical(lambda X, a_: np.ones(len(X), int), ds) == 0.0
    assert fp.sp_gap_empirical(lambda X, a_: a_, ds) == 1.0
    with pytest.raises(DataError):
        fp.sp_gap(np.ones(3), np.zeros(3))


def test_private_classifier_budget_and_serialization(rng):
    m0, m1 = LogisticModel(rng.normal(size=2), 0.0), LogisticModel(rng.normal(size=2), 0.5)
    D0, D1 = _ds(1000, 0, seed=3), _ds(1000, 1, seed=4)
    trace = [PrivacyBudget(1.45, 5e-6), PrivacyBudget(1.45, 5e-6)]
    fc, priv, est = fp.private_fair_classifier(m0, m1, D0, D1, 0.05, 0.05, rng, trace)
    assert fc.budget == PrivacyBudget(3.0, 1e-5)
    assert fc.params == fp.build_params(priv.alpha_tilde, priv.beta_tilde)
    back = fp.FairClassifier.from_dict(json.loads(json.dumps(fc.to_dict())))
    assert back.params == fc.params and back.budget == fc.budget
    X = np.vstack([D0.X, D1.X])
    a = np.r_[D0.a, D1.a]
    assert np.array_equal(back.base_predict(X, a), fc.base_predict(X, a))
