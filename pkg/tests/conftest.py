import time

import pytest

from fuzzy_backstepping.controller import ControllerGains, example_reference
from fuzzy_backstepping.plant import example_plant
from fuzzy_backstepping.sim import SimConfig, simulate

ACCEPTANCE_LINES = []


def example_gains(**overrides):
    values = dict(K=[4.9, 10.2, 20.0], kb=[2.0, 5.0], sigma=[10.0, 8.0], gamma=[10.0, 10.0], beta=[10.0, 10.0],
                  upsilon=[0.1, 0.1], filter_tau=[0.002, 0.002], kappa=1e-4, lam=100.0)
    values.update(overrides)
    return ControllerGains(**values)


def example_config(T=20.0, gains=None, **overrides):
    values = dict(x0=[0.5, 0.0], delta_hat0=[0.01, 0.01], theta_hat0=[0.01, 0.01], tau=0.01, h=1e-4, T=T)
    values.update(overrides)
    return SimConfig(example_plant(), gains or example_gains(), example_reference(max(T, 20.0)), **values)


@pytest.fixture(scope="session")
def example_run():
    """The benchmark run over 20 s, recorded at every step, with its wall time."""
    cfg = example_config()
    start = time.perf_counter()
    traj = simulate(cfg)
    return cfg, traj, time.perf_counter() - start


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
