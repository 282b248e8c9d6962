import math

import numpy as np
import pytest

from fuzzy_backstepping.controller import ReferenceSignal, example_reference
from fuzzy_backstepping.errors import BarrierViolation, ConfigError, SimulationDiverged
from fuzzy_backstepping.plant import PlantModel, example_plant, plant_from_expressions
from fuzzy_backstepping.sim import (SimConfig, Trajectory, check_constraints, closed_loop_deriv, default_bases,
                                    initial_state, lyapunov_surrogate, record_columns, rk4_step, simulate,
                                    state_slices)

from .conftest import example_config, example_gains


def test_rk4_single_step_decay():
    assert rk4_step(np.array([1.0]), 0.0, 0.1, lambda y, t: -y)[0] == pytest.approx(0.9048375, abs=1e-7)


def test_rk4_trivial_cases():
    y = np.array([0.3, -2.0])
    np.testing.assert_array_equal(rk4_step(y, 0.0, 0.1, lambda s, t: np.zeros(2)), y)
    assert rk4_step(np.array([0.0]), 0.0, 0.5, lambda s, t: np.ones(1))[0] == 0.5


def _decay_error(h):
    y = np.array([1.0])
    steps = int(round(1.0 / h))
    for k in range(steps):
        y = rk4_step(y, k * h, h, lambda s, t: -s)
    return abs(y[0] - math.exp(-1.0))


def test_rk4_fourth_order():
    assert _decay_error(1e-2) / _decay_error(5e-3) >= 12.0


def null_setup(T=1.0, x0=(0.0, 0.0)):
    plant = plant_from_expressions(["0", "0"], [3.8, 6.0])
    reference = ReferenceSignal.from_expression("0", max(T, 1.0))
    return SimConfig(plant, example_gains(), reference, x0=list(x0), delta_hat0=[0.01, 0.01],
                     theta_hat0=[0.01, 0.01], T=T)


def test_closed_loop_deriv_zero_at_rest():
    cfg = null_setup()
    state = np.zeros(4 * 2 + 2)
    np.testing.assert_array_equal(closed_loop_deriv(state, 0.0, 0.0, cfg), np.zeros(10))


def test_closed_loop_deriv_plant_part():
    cfg = example_config(T=1.0)
    s0 = initial_state(cfg)
    ud = 0.3
    d = closed_loop_deriv(s0, 0.0, ud, cfg)
    assert np.all(np.isfinite(d))
    assert d[0] == pytest.approx(0.2 * 0.5)
    assert d[1] == pytest.approx(0.6 + 10.5 * ud + 0.4 * math.sin(ud), abs=1e-12)
    sl = state_slices(2)
    # Filters start on their virtual controls, so they are at rest.
    np.testing.assert_allclose(d[sl["w"]], 0.0, atol=1e-9)


def test_closed_loop_deriv_at_barrier():
    cfg = example_config(T=1.0)
    s = initial_state(cfg)
    s[0] = example_reference().y_d(0.0) + 2.0
    with pytest.raises(BarrierViolation) as info:
        closed_loop_deriv(s, 0.0, 0.0, cfg)
    assert info.value.index == 1


def test_initial_filters_match_virtual_controls():
    cfg = example_config(T=1.0)
    s0 = initial_state(cfg)
    w = s0[state_slices(2)["w"]]
    assert w[0] == pytest.approx(2.592166616, abs=1e-6)
    assert w[1] == pytest.approx(28.886435973, abs=1e-6)


def test_default_fls_rule_counts():
    bases = default_bases(example_plant(), example_reference())
    assert [b.N for b in bases] == [25, 125]
    assert [b.dim for b in bases] == [2, 3]


@pytest.mark.parametrize("overrides", [dict(x0=[3.9, 0.0]), dict(delta_hat0=[0.0, 0.01]),
                                       dict(theta_hat0=[0.01, -1.0]), dict(h=3e-4), dict(T=0.0)])
def test_config_validation(overrides):
    with pytest.raises(ConfigError):
        example_config(**overrides)


def test_initial_barrier_breach_is_a_config_error():
    cfg = example_config(T=1.0, x0=[3.5, 0.0])
    with pytest.raises(ConfigError, match="z1"):
        simulate(cfg)


def test_zero_equilibrium_stays_at_zero():
    traj = simulate(null_setup(T=2.0))
    assert np.all(traj.x == 0.0)
    assert np.all(traj.u == 0.0)
    assert np.all(traj.delta_hat > 0) and np.all(traj.theta_hat >= 0)


def test_compiled_and_python_paths_agree():
    cfg = example_config(T=0.1, record_stride=5)
    a = simulate(cfg, backend="compiled")
    b = simulate(cfg, backend="python")
    for name in ("t", "x", "z", "e", "w", "chi", "u", "u_delayed", "alpha", "v", "delta_hat", "theta_hat"):
        np.testing.assert_allclose(getattr(a, name), getattr(b, name), rtol=1e-10, atol=1e-10, err_msg=name)


def test_deterministic():
    cfg = example_config(T=0.5)
    a, b = simulate(cfg), simulate(cfg)
    for name in ("x", "z", "u", "v", "delta_hat", "theta_hat"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_recorded_delay_is_exact_shift():
    cfg = example_config(T=0.5, u0=0.25, chi0=0.5)
    traj = simulate(cfg)
    m = cfg.m
    np.testing.assert_array_equal(traj.u_delayed[m:], traj.u[:-m])
    np.testing.assert_array_equal(traj.u_delayed[:m], 0.25)


def test_stride_records_every_nth_step():
    full = simulate(example_config(T=0.2))
    strided = simulate(example_config(T=0.2, record_stride=7))
    assert len(strided) == 2000 // 7 + 1
    np.testing.assert_array_equal(strided.x, full.x[::7])
    assert np.all(np.diff(strided.t) > 0)


def _pushing_plant():
    return plant_from_expressions(["100 + 0*x2", "u"], [3.8, 6.0])


def test_barrier_violation_is_reported():
    cfg = SimConfig(_pushing_plant(), example_gains(), example_reference(), x0=[0.5, 0.0],
                    delta_hat0=[0.01, 0.01], theta_hat0=[0.01, 0.01], T=0.2)
    caught = []
    for backend in ("compiled", "python"):
        with pytest.raises(BarrierViolation) as info:
            simulate(cfg, backend=backend)
        caught.append(info.value)
    for exc in caught:
        kb = cfg.gains.kb[exc.index - 1]
        assert abs(exc.z) >= kb * (1 - 1e-9)
        # x1 is pushed at about 100 per second, so the loop cannot hold for long.
        assert 0.0 < exc.time < 0.05
        assert len(exc.trajectory) > 0 and exc.trajectory.t[-1] <= exc.time
    assert caught[0].index == caught[1].index
    assert caught[0].time == pytest.approx(caught[1].time, abs=1e-12)


def _dynamics(x, u):
    out = np.empty(2)
    out[0] = 0.0
    out[1] = 0.0
    return out


def _blowup(t):
    out = np.zeros(2)
    if t > 0.01:
        out[1] = np.inf
    return out


@pytest.mark.parametrize("backend", ["compiled", "python"])
def test_divergence_is_reported(backend):
    plant = PlantModel(2, _dynamics, _blowup, [3.8, 6.0], [0.0, 0.0])
    cfg = SimConfig(plant, example_gains(), example_reference(), x0=[1.0, 0.0], delta_hat0=[0.01, 0.01],
                    theta_hat0=[0.01, 0.01], T=0.05)
    with pytest.raises(SimulationDiverged) as info:
        simulate(cfg, backend=backend)
    assert info.value.index == 2
    assert info.value.time == pytest.approx(0.01, abs=2e-4)


def test_positivity_from_larger_initial_estimates():
    traj = simulate(example_config(delta_hat0=[0.1, 0.1], theta_hat0=[0.1, 0.1], record_stride=10))
    assert traj.delta_hat.min() > 0 and traj.theta_hat.min() > 0


def synthetic(sup_x1=0.0, z1=0.0, n=2, samples=3, kb=(2.0, 5.0), kc=(3.8, 6.0)):
    rec = np.zeros((samples, record_columns(n)["width"]))
    cols = record_columns(n)
    rec[:, cols["t"]] = np.arange(samples) * 0.1
    rec[1, cols["x"].start] = sup_x1
    rec[1, cols["z"].start] = z1
    return Trajectory.from_records(rec, n, kb, kc)


def test_constraint_report_pass_with_margin():
    report = check_constraints(synthetic(sup_x1=3.5, z1=1.0))
    assert report.passed
    assert report.x_margin[0] == pytest.approx(0.3)
    assert report.z_margin[0] == pytest.approx(1.0)


def test_constraint_report_flags_barrier_contact():
    report = check_constraints(synthetic(z1=2.0))
    assert not report.passed
    assert not report.z_ok[0] and report.z_ok[1]
    assert report.x_ok.all()


def test_constraint_report_uses_given_bounds():
    report = check_constraints(synthetic(sup_x1=3.5), kc=[3.0, 6.0], kb=[2.0, 5.0])
    assert not report.x_ok[0]
    assert "VIOLATED" in report.summary()


def test_lyapunov_surrogate_examples():
    np.testing.assert_array_equal(lyapunov_surrogate(synthetic()), 0.0)
    vs = lyapunov_surrogate(synthetic(z1=1.0))
    assert vs[1] == pytest.approx(math.log(4.0 / 3.0), abs=1e-12)
    assert vs[1] == pytest.approx(0.28768, abs=1e-5)
    assert vs[0] == 0.0


def test_example_run_constraints(example_run):
    cfg, traj, _ = example_run
    report = check_constraints(traj)
    assert report.passed
    assert np.all(report.chain_ok)
    rho = report.rho
    assert rho[0] == pytest.approx(math.sqrt(3.25), abs=1e-6)
    # Every recorded value is finite and time is increasing.
    assert np.all(np.diff(traj.t) > 0)
    for name in ("x", "z", "e", "w", "u", "v", "delta_hat", "theta_hat"):
        assert np.all(np.isfinite(getattr(traj, name))), name
    assert np.all(traj.barrier_margins > 0)


def test_example_run_surrogate_settles(example_run):
    _, traj, _ = example_run
    vs = traj.Vs
    assert vs[traj.t > 5].max() <= vs[traj.t <= 5].max()
