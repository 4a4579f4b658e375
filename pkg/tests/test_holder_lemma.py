import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stickyspde.errors import ContractError, ParameterError
from stickyspde.holder_lemma import (EXHAUSTIVE_LIMIT, HolderClass, SampledFn, generate_holder_fn, hat_function,
                                     hat_ratio, holder_constant_estimate, holder_scan, pair_lags, ral_check,
                                     ral_constant, ral_exponent, scale_reduce, suite_case, trapezoid)
from stickyspde.noise import SeedSpec

alphas = st.sampled_from([i / 10 for i in range(1, 10)])


def test_constant_closed_form():
    # (2C)^(-1/beta) with beta = 1/4 is (2C)^-4
    assert ral_constant(0.25, 8.0) == 16.0 ** -4
    assert ral_constant(0.25, 0.3) == 1.0
    assert ral_constant(0.5, 0.5) == 1.0
    assert ral_exponent(0.5, 0.25) == pytest.approx(0.9)


def test_bad_classes_rejected():
    for beta, C in [(0.0, 1.0), (1.0, 1.0), (0.25, 0.0), (0.25, math.inf)]:
        with pytest.raises(ParameterError):
            HolderClass(beta, C)


def test_uncertified_function_rejected():
    x = np.linspace(-1, 1, 11)
    with pytest.raises(ContractError):
        ral_check(SampledFn(x, hat_function(x)), 0.5)
    with pytest.raises(ContractError):
        SampledFn(x, -hat_function(x))


def test_hat_constant_is_one():
    x = np.arange(-1500, 1501) * 1e-3
    est = holder_constant_estimate(SampledFn(x, hat_function(x)), 0.25)
    assert abs(est - 1.0) <= 1e-9


@given(st.floats(0.2, 5.0), st.floats(0.2, 5.0), alphas)
def test_hat_integrals_match_closed_form(h, w, a):
    x = np.linspace(-w, w, 4001)
    f = hat_function(x, h, w)
    assert trapezoid(f ** a, x[1] - x[0]) == pytest.approx(2 * w * h ** a / (a + 1), rel=2e-3)
    C = h * w ** -0.25
    ratio = trapezoid(f ** a, x[1] - x[0]) / (w * h) ** ral_exponent(a, 0.25)
    assert ratio == pytest.approx(hat_ratio(a, 0.25, C), rel=2e-3)


@given(alphas, st.floats(0.01, 100.0))
def test_constant_below_hat_ratio(a, C):
    # K is a lower bound for every function in the class, hats included
    assert ral_constant(0.25, C) <= hat_ratio(a, 0.25, C)


def test_pair_lags_schedule():
    assert np.array_equal(pair_lags(10), np.arange(1, 10))
    big = pair_lags(EXHAUSTIVE_LIMIT + 500)
    assert big[0] == 1 and big[-1] == EXHAUSTIVE_LIMIT + 499
    assert np.all(np.diff(big) > 0)
    assert pair_lags(1).size == 0


def test_scan_ignores_zero_padding():
    x = np.linspace(-1, 1, 201)
    f = hat_function(x, 1.0, 0.5)
    padded = np.concatenate([np.zeros(300), f, np.zeros(300)])
    dx = x[1] - x[0]
    assert holder_scan(padded, dx, 0.25, None) == pytest.approx(holder_scan(f, dx, 0.25, None))


@given(st.integers(0, 10_000), st.floats(0.3, 8.0), st.floats(0.1, 6.0))
def test_generated_functions_carry_their_certificate(i, C, w):
    f = generate_holder_fn(SeedSpec(77, i), HolderClass(0.25, C), w, n=513)
    assert holder_scan(f.values, f.dx, 0.25, None) <= C * (1 + 1e-12)
    assert f.values.min() >= 0 and f.values[0] == 0 and f.values[-1] == 0


@given(st.integers(0, 10_000), alphas)
def test_inequality_holds_on_generated(i, a):
    rows = suite_case(SeedSpec(5, i), alphas=(a,))
    assert rows[0].holds and rows[0].ratio >= 1.0


@given(st.integers(0, 10_000))
def test_rescaling_normalizes_mass_and_keeps_class(i):
    f = generate_holder_fn(SeedSpec(6, i), HolderClass(0.25, 2.0), 1.5, n=513)
    g, b = scale_reduce(f)
    assert g.integral() == pytest.approx(1.0, rel=1e-12)
    assert b == pytest.approx(f.integral() ** 0.8, rel=1e-12)
    # |g(x) - g(y)| = b^-beta |f(bx) - f(by)| keeps the Hölder constant
    assert holder_scan(g.values, g.dx, 0.25, None) == pytest.approx(holder_scan(f.values, f.dx, 0.25, None),
                                                                      rel=1e-9)
    for a in (0.1, 0.5, 0.9):
        assert ral_check(f, a).holds == ral_check(g, a).holds
        # ratio lhs/rhs is exactly scale invariant
        assert ral_check(f, a).ratio == pytest.approx(ral_check(g, a).ratio, rel=1e-9)


def test_rescaling_zero_function_rejected():
    x = np.linspace(-1, 1, 11)
    with pytest.raises(ContractError):
        scale_reduce(SampledFn(x, np.zeros(11), HolderClass(0.25, 1.0)))
