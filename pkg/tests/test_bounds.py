import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cocyclestab import bounds
from cocyclestab.cocycle import sample_operator_ball

import oracles

B = bounds.compute_constant_B()


# -- the constant ---------------------------------------------------------


def test_constant_matches_fixed_point_oracle():
    z_star, b_oracle = oracles.fixed_point_constant()
    assert abs(B - b_oracle) <= 1e-6
    assert abs(bounds.constant_B_minimizer() - z_star) <= 1e-6
    assert B == pytest.approx(-1.2785, abs=1e-3)


def test_g_limits_and_closed_forms():
    assert bounds.linear_g(1.0) == pytest.approx(-1.0, abs=1e-12)
    assert abs(bounds.linear_g(1e-8)) < 1e-7
    for z in (0.1, 0.5, 1.3, 1.9, 2.0):
        assert bounds.linear_g(z) == pytest.approx(oracles.linear_integral_closed_form(z), abs=1e-12)
        assert bounds.linear_g(z) >= B - 1e-12


# -- integral lemmas ------------------------------------------------------


def test_linear_examples():
    r = bounds.verify_linear_bound(0, 0)
    assert r.observed_min == 0.0 and r.passed
    r = bounds.verify_linear_bound(2.0, 0)
    assert r.observed_min == pytest.approx(oracles.linear_integral_closed_form(2.0), abs=1e-8)
    assert r.observed_min == pytest.approx(-1.0, abs=1e-8)
    assert r.passed
    r = bounds.verify_linear_bound(5j, 3)
    assert r.observed_min >= 0.0 and r.passed


def test_linear_bound_is_attained_near_minimizer():
    r = bounds.verify_linear_bound(bounds.constant_B_minimizer(), 0)
    assert r.margin == pytest.approx(0.0, abs=1e-8)
    assert r.passed


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.integers(0, 10))
def test_linear_bound_holds(re, im, l):
    assert bounds.verify_linear_bound(complex(re, im), l).passed


def test_poly_examples():
    r = bounds.verify_poly_bound([], 0)
    assert r.observed_min == 0.0 and r.claimed_bound == 0.0 and r.passed
    r = bounds.verify_poly_bound([1.0], 0)
    assert r.observed_min == pytest.approx(-1.0, abs=1e-8)
    assert r.passed


def test_poly_roots_inside_unit_interval():
    r = bounds.verify_poly_bound([0.3, 0.3, 0.7, 0.5 + 0.01j, 0.5 - 0.01j], 2)
    assert r.passed and math.isfinite(r.observed_min)


def test_poly_random_battery():
    assert all(rep.passed for rep in bounds.poly_battery(50, seed=11))


def test_operator_examples():
    r = bounds.verify_operator_bound([np.zeros((2, 2)), np.eye(2)], 0)
    assert r.vacuous and r.passed
    roots = np.array([0.4, 1.7, -0.6])
    coeffs = np.polynomial.polynomial.polyfromroots(roots)
    scalar = bounds.verify_operator_bound([[[c]] for c in coeffs], 1)
    poly = bounds.verify_poly_bound(roots, 1)
    assert scalar.observed_min == pytest.approx(poly.observed_min, abs=1e-8)
    assert all(rep.passed for rep in bounds.operator_battery(50, seed=12))


def test_magic_examples():
    rng = np.random.default_rng(0)
    L, A, R = (rng.standard_normal((4, 4)) for _ in range(3))
    r = bounds.verify_magic_bound(L, np.zeros((4, 4)), A, R, 2, 1)
    assert r.observed_min == pytest.approx(0.0, abs=1e-12) and r.passed
    eye = np.eye(3)
    r = bounds.verify_magic_bound(eye, -eye, eye, eye, 1, 0)
    assert r.observed_min == pytest.approx(-1.0, abs=1e-8)
    assert r.observed_min >= B and r.passed


def test_magic_vacuous_when_compound_vanishes():
    a = np.diag([1.0, 0.0, 0.0])
    r = bounds.verify_magic_bound(np.eye(3), np.eye(3), a, np.eye(3), 2, 0)
    assert r.vacuous and r.passed


def test_magic_random_battery():
    reps = bounds.magic_battery(30, seed=13)
    assert all(rep.passed for rep in reps)


# -- Monte Carlo costs ----------------------------------------------------


def test_bad_block_small_noise_on_invertible_chain():
    rng = np.random.default_rng(1)
    chain = rng.standard_normal((3, 3, 3)) + 3 * np.eye(3)
    est = bounds.estimate_bad_block_cost(chain, 1e-7, 2, 2000, rng=2)
    assert abs(est.estimate) < 1e-5
    assert est.passed and not est.trivial


def test_bad_block_zero_matrix():
    rng = np.random.default_rng(3)
    deltas = sample_operator_ball(rng, 2, 10_000).reshape(10_000, 1, 2, 2)
    est = bounds.estimate_bad_block_cost(np.zeros((1, 2, 2)), 0.5, 1, deltas=deltas)
    assert est.passed and est.trivial
    xi = np.log(0.5 * np.linalg.norm(deltas[:, 0], 2, axis=(1, 2)))
    assert np.all(np.isfinite(xi))
    assert xi.mean() > bounds.BAD_BLOCK_SLOPE * 4


def test_bad_block_chain_with_rank_one_member():
    rng = np.random.default_rng(4)
    chain = rng.standard_normal((3, 3, 3))
    chain[1] = np.outer(rng.standard_normal(3), rng.standard_normal(3))
    est = bounds.estimate_bad_block_cost(chain, 0.1, 2, 10_000, rng=5)
    assert est.passed


def test_bad_block_rescaling_invariance():
    rng = np.random.default_rng(6)
    chain = rng.standard_normal((2, 3, 3))
    n = 5000
    deltas = sample_operator_ball(rng, 3, 2 * n).reshape(n, 2, 3, 3)
    a = bounds.estimate_bad_block_cost(chain, 0.1, 2, deltas=deltas)
    b = bounds.estimate_bad_block_cost(2.5 * chain, 0.25, 2, deltas=deltas)
    assert b.estimate == pytest.approx(a.estimate, abs=1e-9)
    c = bounds.estimate_bad_block_cost(2.5 * chain, 0.25, 2, n, rng=7)
    assert abs(c.estimate - a.estimate) <= 3 * math.hypot(a.stderr, c.stderr)


def test_glue_identity_has_zero_slope():
    eye = np.eye(3)
    fit = bounds.estimate_glue_cost(eye, eye, eye, 3, [1e-1, 1e-2, 1e-3], 4000, rng=0)
    assert fit.K == pytest.approx(0.0, abs=0.05)
    assert fit.passed


def test_glue_zero_matrix_has_unit_slope():
    eye = np.eye(2)
    fit = bounds.estimate_glue_cost(eye, np.zeros((2, 2)), eye, 1, [1e-1, 1e-2, 1e-3, 1e-4], 4000, rng=1)
    assert fit.K == pytest.approx(1.0, abs=1e-9)
    assert fit.passed


def test_glue_requires_two_decades():
    eye = np.eye(2)
    with pytest.raises(ValueError):
        bounds.estimate_glue_cost(eye, eye, eye, 1, [0.1, 0.05], 100)


def test_envelope_fit_is_below_every_point():
    x = np.log([1e-1, 1e-2, 1e-3])
    est = np.array([0.1, -1.5, -4.0])
    c0, k = bounds.fit_log_envelope(x, est, [0.1] * 3)
    assert k >= 0
    assert np.all(c0 + k * x <= est + 1e-9)


def test_report_serializes_infinite_values():
    r = bounds.verify_operator_bound([np.zeros((2, 2)), np.eye(2)], 0)
    d = r.to_dict()
    assert d["observed_min"] is None and d["observed_min_flag"] == "inf"
