import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from stickyspde.errors import DomainError, ParameterError
from stickyspde.holder_lemma import ral_constant
from stickyspde.noise import SeedSpec
from stickyspde.sde1d import (ScaleFn, SpeedMeasure, absorption_times, epsilon_ledger, girsanov_survival,
                              log_scale_eval, p_prime, scale_eval, scale_inv, scale_k, scale_quad,
                              simulate_sde_euler, simulate_sticky_exact, sticky_occupation, survival_exact,
                              time_change_tau)

params = st.tuples(st.floats(0.2, 5.0), st.floats(0.05, 0.45), st.floats(0.2, 5.0))


def test_scale_closed_form_value():
    s = ScaleFn(1.0, 0.25, 1.0)
    assert abs(scale_eval(s, 1.0) - (1 - 5 * math.exp(-4)) / 8) < 1e-12
    assert s.s_inf == pytest.approx(0.125, rel=1e-14)


@given(params, st.floats(0.01, 3.0))
def test_scale_matches_quadrature(prm, x):
    s = ScaleFn(*prm)
    assert scale_eval(s, x) == pytest.approx(scale_quad(s, x), rel=1e-9, abs=1e-14)


@given(params)
def test_ode_residual_small(prm):
    s = ScaleFn(*prm)
    x = np.linspace(0.01, 3, 100)
    res = s.ode_residual(x)
    assert np.max(np.abs(res)) < 1e-9 * max(1.0, s.b)


@given(params, st.floats(0.0, 0.999))
def test_scale_inverse_roundtrip(prm, frac):
    s = ScaleFn(*prm)
    y = frac * s.s_inf
    assert scale_eval(s, scale_inv(s, y)) == pytest.approx(y, rel=1e-10, abs=1e-15)


def test_scale_domain_errors():
    s = ScaleFn()
    with pytest.raises(DomainError):
        scale_eval(s, -1.0)
    with pytest.raises(DomainError):
        scale_inv(s, s.s_inf)
    with pytest.raises(ParameterError):
        ScaleFn(1.0, 0.5, 1.0)


@given(params, st.floats(0.05, 2.0))
def test_speed_measure_cumulative_against_quadrature(prm, x):
    s = ScaleFn(*prm)
    m = SpeedMeasure(s)
    # M(s(x)) = ∫_0^x s'(u) m(s(u)) du with m the natural-scale density
    val, _ = integrate.quad(lambda u: 1.0 / (s.derivative(u) * s.K * u ** (2 * s.q)), 0, x, limit=200)
    assert float(s.speed_cumulative(x)) == pytest.approx(val, rel=1e-7)
    y = scale_eval(s, x)
    if y > s.s_inf * (1 - 1e-6):
        return  # too close to s_inf for the inverse to resolve x
    assert float(m.density(y)) == pytest.approx(1.0 / (s.derivative(x) ** 2 * s.K * x ** (2 * s.q)), rel=1e-5)
    assert m.atom_at_zero == 1 / s.b


def test_log_scale_agrees_and_survives_underflow():
    s = ScaleFn(1.0, 0.3, 0.5)
    assert log_scale_eval(s, 0.7) == pytest.approx(math.log(scale_eval(s, 0.7)), rel=1e-12)
    sk = scale_k(1.0, 0.25, 8.0)
    assert math.isfinite(log_scale_eval(sk, 1.0))
    assert sk.q == p_prime(0.25) == 0.45 and sk.K == ral_constant(0.25, 8.0)


def test_epsilon_ledger():
    led = epsilon_ledger(1.0, 0.25, 8.0)
    assert led.x0_max == pytest.approx(led.sk1 / 6) and led.eps0 == pytest.approx(led.sk1 / 12)
    assert led.ratio_ok
    assert 2 * led.b * led.eps0 == pytest.approx(led.x0_max)


def test_sticky_identity_on_paths():
    m = SpeedMeasure(ScaleFn(1.0, 0.25, 1.0))
    for i in range(5):
        ps = simulate_sticky_exact(SeedSpec(12, i), m, 0.0, 2.0, 1e-4, clock_step=1e-3)
        assert ps.occupation_time_at_zero > 0
        # b * occupation equals the driver local time up to rounding of the sum
        assert abs(1.0 * ps.occupation_time_at_zero - ps.local_time_driver) <= 1e-12 * ps.local_time_driver
        assert ps.elapsed == pytest.approx(2.0, rel=1e-9)


def test_sticky_hits_target_with_right_probability_small():
    m = SpeedMeasure(ScaleFn(1.0, 0.25, 1.0))
    hits = sum(not math.isnan(simulate_sticky_exact(SeedSpec(14, i), m, 0.1, math.inf, 1e-6, target=1.0,
                                                     stop_at_zero=True, clock_step=math.inf).hit_times[1.0])
               for i in range(400))
    p = scale_eval(m.scale, 0.1) / scale_eval(m.scale, 1.0)
    assert abs(hits / 400 - p) < 4 * math.sqrt(p * (1 - p) / 400)


def test_sticky_mean_matches_euler_roughly():
    m = SpeedMeasure(ScaleFn(1.0, 0.25, 1.0))
    occ = sticky_occupation(SeedSpec(15), m, 0.0, 1.0, 50)
    assert occ.shape == (50, 3) and np.all(occ[:, 0] > 0)


def test_euler_clipped_path():
    ps = simulate_sde_euler(SeedSpec(1), 1.0, 0.25, 0.0, 5.0, 1e-3, levels=(0.5, 1.0))
    assert ps.final_value >= 0 and ps.steps == 5000
    t1, t2 = ps.hit_times[0.5], ps.hit_times[1.0]
    assert not math.isnan(t1) and (math.isnan(t2) or t2 >= t1)


def test_survival_exact_limits():
    T = np.array([1e-6, 1.0, 1e6])
    s = survival_exact(0.25, 1.0, T)
    assert s[0] == pytest.approx(1.0) and 0 < s[1] < 1 and s[2] < 1e-3
    # large-T power law with exponent -1/(2(1-q))
    big = survival_exact(0.25, 1.0, np.array([1e6, 1e7]))
    assert math.log(big[1] / big[0]) / math.log(10) == pytest.approx(-2 / 3, abs=1e-3)


def test_absorption_matches_exact_survival():
    t = absorption_times(SeedSpec(3), 0.25, 1.0, 16.0, 0.01, 3000)
    for T in (1.0, 4.0, 16.0):
        p = survival_exact(0.25, 1.0, T)
        assert abs((t > T).mean() - p) < 4 * math.sqrt(p * (1 - p) / 3000) + 0.01


def test_girsanov_result_fields():
    r = girsanov_survival(SeedSpec(2), 0.25, 1.0, [4, 16], n_paths=500)
    assert r.T.tolist() == [4.0, 16.0] and np.all(np.diff(r.survival) <= 0)
    with pytest.raises(ParameterError):
        girsanov_survival(SeedSpec(2), 0.6, 1.0, [4, 16])


def test_time_change_constant_case():
    # <N>' = K M^(2p') exactly gives tau(t) = t
    M = np.full(101, 0.5)
    K, pp, dt = 0.3, 0.45, 0.01
    qv = K * 0.5 ** (2 * pp) * dt * np.ones(100)
    tc = time_change_tau(M, qv, K, pp, dt)
    assert np.allclose(tc.tau_prime, 1.0) and np.allclose(tc.tau, tc.tau_grid)
    with pytest.raises(ParameterError):
        time_change_tau(M[:-1], qv, K, pp, dt)
