import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from fuzzy_backstepping.controller import (AdaptiveState, ControllerGains, ReferenceSignal, adaptation_derivs,
                                           control_pass, control_pass_packed, control_v, dsc_filter_deriv,
                                           example_reference, input_filter_deriv, pade_intermediate_deriv,
                                           robust_tanh_term, tracking_coordinates, virtual_control_first,
                                           virtual_control_last, virtual_control_mid)
from fuzzy_backstepping.errors import BarrierViolation, ConfigError
from fuzzy_backstepping.fls import pack_bases
from fuzzy_backstepping.plant import example_plant
from fuzzy_backstepping.sim import default_bases

from .conftest import example_gains

T3 = math.tanh(1.0 / 3.0 / 0.1)


def gains3():
    return ControllerGains(K=[4.9, 10.2, 10.2, 20.0], kb=[2.0, 5.0, 5.0], sigma=[10.0] * 3, gamma=[10.0] * 3,
                           beta=[10.0] * 3, upsilon=[0.1] * 3, filter_tau=[0.002] * 3, kappa=1e-4, lam=100.0)


def state(n=2, dh=0.0, th=0.0, w=None, chi=0.0, u=0.0):
    return AdaptiveState(np.full(n, dh), np.full(n, th), np.zeros(n) if w is None else w, chi, u)


def test_perfect_tracking_gives_zero_coordinates():
    x = np.array([1.2, -0.3])
    s = state(w=np.array([-0.3, 0.4]), chi=0.9, u=0.5)
    z, e = tracking_coordinates(x, s, 1.2, alpha=[-0.3, 0.4])
    np.testing.assert_array_equal(z, [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(e, [0.0, 0.0])


def test_tracking_coordinates_definitions():
    z, _ = tracking_coordinates([1.0, 0.0], state(w=np.array([0.0, 0.1]), chi=0.5, u=0.2), 0.0, alpha=[0, 0])
    assert z[0] == 1.0 and z[1] == 0.0
    assert z[2] == pytest.approx(0.2)


def test_robust_tanh_term():
    assert robust_tanh_term(0.0, 0.1) == 0.0
    assert robust_tanh_term(1e6, 0.1) == pytest.approx(1.0)
    assert robust_tanh_term(1.0 / 3.0, 0.1) == pytest.approx(0.99746, abs=1e-5)


def test_first_virtual_control_examples():
    g = example_gains()
    assert virtual_control_first(0.0, 0.7, state(dh=3.0, th=2.0), g) == 0.0
    assert virtual_control_first(1.0, 0.7, state(), g) == pytest.approx(-4.9 - 1.0 / 3.0, abs=1e-12)
    assert virtual_control_first(1.0, 0.7, state(), g) == pytest.approx(-5.23333, abs=1e-5)
    assert virtual_control_first(1.0, 0.7, state(dh=1.0), g) == pytest.approx(-4.9 - 1.0 / 3.0 - T3, abs=1e-12)
    assert virtual_control_first(1.0, 0.7, state(dh=1.0), g) == pytest.approx(-6.23079, abs=1e-5)


def test_first_virtual_control_barrier():
    with pytest.raises(BarrierViolation) as info:
        virtual_control_first(2.0, 0.5, state(), example_gains())
    assert info.value.index == 1


def test_mid_virtual_control_examples():
    g = gains3()
    s = state(3)
    assert virtual_control_mid(2, 0.0, 0.0, 0.5, s, g) == 0.0
    assert virtual_control_mid(2, 1.0, 0.0, 0.5, s, g) == pytest.approx(-25.0 / 3.0, abs=1e-12)
    assert virtual_control_mid(2, 0.0, 1.0, 0.5, s, g) == pytest.approx(-10.2 - 1.0 / 24.0, abs=1e-12)
    assert virtual_control_mid(2, 0.0, 1.0, 0.5, s, g) == pytest.approx(-10.24167, abs=1e-5)
    with pytest.raises(BarrierViolation):
        virtual_control_mid(2, 2.0, 0.0, 0.5, s, g)
    with pytest.raises(BarrierViolation):
        virtual_control_mid(2, 0.0, -5.0, 0.5, s, g)


def test_last_virtual_control_examples():
    g = example_gains()
    s = state()
    assert virtual_control_last(0.0, 0.0, 0.5, s, g) == 0.0
    assert virtual_control_last(0.0, 1.0, 0.5, s, g) == pytest.approx(-10.2, abs=1e-12)
    assert virtual_control_last(1.0, 0.0, 0.5, s, g) == pytest.approx(-25.0 / 3.0, abs=1e-12)


def test_control_v_examples():
    g = example_gains()
    assert control_v(0.0, 0.0, state(), g) == 0.0
    v = control_v(0.1, 0.0, state(chi=0.5, u=0.2), g)
    assert v == pytest.approx(-2.0 + 50.0 - 40.00002, abs=1e-12)
    assert v == pytest.approx(7.99998, abs=1e-5)
    assert control_v(0.0, g.filter_tau[-1], state(), g) == pytest.approx(-1.0)


def test_control_v_needs_resolved_lambda():
    g = ControllerGains(**{**example_gains().__dict__, "lam": None})
    with pytest.raises(ConfigError):
        control_v(0.0, 0.0, state(), g)
    assert g.resolve(0.01).lam == pytest.approx(200.0)
    assert example_gains().resolve(0.01).lam == 100.0


def test_adaptation_examples():
    g = example_gains()
    assert adaptation_derivs(1, 0.0, 0.4, state(), g) == (0.0, 0.0)
    d_delta, _ = adaptation_derivs(1, 1.0, 0.4, state(), g)
    assert d_delta == pytest.approx(10.0 / 3.0 * T3, abs=1e-12)
    assert d_delta == pytest.approx(3.32486, abs=1e-5)
    _, d_theta = adaptation_derivs(1, 1.0, 1.0, state(), g)
    assert d_theta == pytest.approx(10.0 / 3.0, abs=1e-12)


def test_adaptation_leakage():
    g = example_gains()
    d_delta, d_theta = adaptation_derivs(2, 0.0, 0.4, state(dh=0.5, th=0.25), g)
    assert d_delta == pytest.approx(-8.0 * 10.0 * 0.5)
    assert d_theta == pytest.approx(-8.0 * 10.0 * 0.25)


def test_filter_and_pade_examples():
    assert dsc_filter_deriv(0.3, 0.3, 0.1) == 0.0
    assert dsc_filter_deriv(0.0, 1.0, 0.1) == pytest.approx(10.0)
    assert dsc_filter_deriv(1.0, 0.0, 0.5) == pytest.approx(-2.0)
    assert pade_intermediate_deriv(0.0, 0.0, 200.0) == 0.0
    assert pade_intermediate_deriv(0.0, 1.0, 200.0) == 400.0
    assert pade_intermediate_deriv(1.4, 0.7, 200.0) == 0.0
    assert input_filter_deriv(0.0, 0.0, 1e-4) == 0.0
    assert input_filter_deriv(1.0, 0.0, 1e-4) == pytest.approx(-1e-4)
    assert input_filter_deriv(2.0, 2e-4, 1e-4) == 0.0


@pytest.mark.parametrize("field,value", [("K", [1.0, 0.0, 1.0]), ("kb", [2.0, -5.0]), ("sigma", [1.0]),
                                         ("upsilon", [0.0, 0.1]), ("kappa", -1.0), ("lam", 0.0)])
def test_gains_validation(field, value):
    with pytest.raises(ConfigError):
        ControllerGains(**{**example_gains().__dict__, field: value})


def test_reference_bounds():
    ref = example_reference(20.0)
    assert abs(ref.A0 - math.sqrt(3.25)) < 1e-9
    assert abs(ref.A1 - math.sqrt(3.25)) < 1e-9
    assert ref.y_d_ddot(0.3) == pytest.approx(-(1.5 * math.sin(0.3) + math.cos(0.3)))
    ts = np.linspace(0, 20, 5001)
    assert max(abs(ref.y_d(t)) for t in ts) <= ref.A0


def test_reference_rejects_unknown_symbols():
    with pytest.raises(ConfigError):
        ReferenceSignal.from_expression("sin(s)", 1.0)


# tanh compensator gap bounds, exact in floating point.
@settings(max_examples=500)
@given(p=st.floats(-1e3, 1e3), ups=st.floats(1e-3, 10.0, exclude_min=True))
def test_tanh_compensator_inequalities(p, ups):
    prod = p * robust_tanh_term(p, ups)
    assert prod >= 0.0
    gap = abs(p) - prod
    assert 0.0 <= gap < 0.2785 * ups


z_strategy = st.floats(-1.99, 1.99)


@settings(max_examples=200)
@given(z=z_strategy, xi=st.floats(0.04, 1.0), dh=st.floats(0, 5), th=st.floats(0, 5))
def test_first_virtual_control_is_odd(z, xi, dh, th):
    g = example_gains()
    s = state(dh=dh, th=th)
    assert virtual_control_first(-z, xi, s, g) == pytest.approx(-virtual_control_first(z, xi, s, g), abs=1e-12)


@settings(max_examples=200)
@given(z=st.floats(-4.99, 4.99), xi=st.floats(0.008, 1.0), dh=st.floats(0, 5), th=st.floats(0, 5))
def test_last_virtual_control_is_odd_without_cross_term(z, xi, dh, th):
    g = example_gains()
    s = state(dh=dh, th=th)
    assert virtual_control_last(0.0, -z, xi, s, g) == pytest.approx(-virtual_control_last(0.0, z, xi, s, g),
                                                                     abs=1e-12)


def test_first_virtual_control_blows_up_at_barrier():
    g = example_gains()
    s = state(dh=0.01, th=0.01)
    zs = 2.0 - np.logspace(-1, -8, 30)
    mags = [abs(virtual_control_first(z, 0.5, s, g)) for z in zs]
    assert all(b > a for a, b in zip(mags, mags[1:]))
    assert mags[-1] > 1e7


@settings(max_examples=30, deadline=None)
@given(amp=st.floats(0.0, 1.95), omega=st.floats(0.1, 20.0), dh0=st.floats(1e-3, 0.5), th0=st.floats(1e-3, 0.5),
       xi=st.floats(0.04, 1.0))
def test_adaptation_preserves_positivity(amp, omega, dh0, th0, xi):
    g = example_gains()
    s = state(dh=dh0, th=th0)
    h = 1e-3
    for k in range(2000):
        z = amp * math.sin(omega * k * h)
        d_delta, d_theta = adaptation_derivs(1, z, xi, s, g)
        # Forward Euler with h * sigma * gamma = 0.1 < 1 keeps the leakage contraction positive.
        s.delta_hat[0] += h * d_delta
        s.theta_hat[0] += h * d_theta
        assert s.delta_hat[0] > 0 and s.theta_hat[0] > 0


class _Ref:
    def __init__(self, y, yd):
        self.y_d = lambda t: y
        self.y_d_dot = lambda t: yd


@settings(max_examples=100, deadline=None)
@given(x1=st.floats(-1.5, 1.5), x2=st.floats(-3, 3), w2=st.floats(-3, 3), w3=st.floats(-50, 50),
       chi=st.floats(-5, 5), u=st.floats(-5, 5), y=st.floats(-1.8, 1.8), yd=st.floats(-1.8, 1.8),
       dh=st.floats(0, 1), th=st.floats(0, 1))
def test_packed_pass_matches_reference(x1, x2, w2, w3, chi, u, y, yd, dh, th):
    assume(abs(x1 - y) < 1.9 and abs(x2 - w2) < 4.9)
    g = example_gains()
    bases = default_bases(example_plant(), example_reference())
    s = AdaptiveState([dh, dh * 2], [th, th / 2], [w2, w3], chi, u)
    x = np.array([x1, x2])
    ref = control_pass(x, s, 0.0, _Ref(y, yd), g, bases)
    alpha, z, e, w_dot, xi_sq, zbuf = (np.empty(2), np.empty(3), np.empty(2), np.empty(2), np.empty(2), np.empty(3))
    centers, inv_scale, offsets = pack_bases(bases)
    v, bad = control_pass_packed(x, chi, u, s.w, s.delta_hat, s.theta_hat, y, yd, 2, g.packed(), centers,
                                 inv_scale, offsets, alpha, z, e, w_dot, xi_sq, zbuf)
    assert bad == -1
    np.testing.assert_allclose(alpha, ref.alpha, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(z, ref.z, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(e, ref.e, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(w_dot, ref.w_dot, rtol=1e-12, atol=1e-9)
    assert v == pytest.approx(ref.v, rel=1e-12, abs=1e-9)


def test_control_pass_reports_time_of_violation():
    g = example_gains()
    bases = default_bases(example_plant(), example_reference())
    with pytest.raises(BarrierViolation) as info:
        control_pass(np.array([3.0, 0.0]), state(), 0.0, example_reference(), g, bases)
    assert info.value.index == 1
    assert info.value.time == 0.0
    assert np.all(control_pass(np.array([1.0, 0.0]), state(), 0.0, example_reference(), g,
                               bases).barrier_margins > 0)
