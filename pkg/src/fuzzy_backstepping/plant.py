"""Pure-feedback plants with bounded disturbances and an exact input delay line.

A plant of order ``n`` evolves as::

    dx_i/dt = f_i(x_1..x_i, x_{i+1}) + d_i(t),   i < n
    dx_n/dt = f_n(x_1..x_n, u(t - tau)) + d_n(t)

The per-index evaluators are packed into one vector function
``dynamics(x, u_eff) -> array`` whose ``i``-th entry may only read
``x[:i+1]`` and ``x[i+1]`` (``u_eff`` for the last entry).  Packing them
keeps the function compilable by numba.
"""
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _expr
from ._jit import jit
from .errors import ConfigError, SimulationDiverged


@dataclass(frozen=True)
class PlantModel:
    """Plant description.

    Attributes:
        n: system order.
        dynamics: ``f(x, u_eff) -> ndarray`` of the ``n`` nominal derivatives.
        disturbance: ``d(t) -> ndarray`` of the ``n`` disturbance values.
        constraint_bounds: state constraints ``k_c`` (``|x_i| <= k_ci``).
        disturbance_bounds: ``d_M`` with ``|d_i(t)| <= d_M[i]``.
    """

    n: int
    dynamics: Callable
    disturbance: Callable
    constraint_bounds: np.ndarray
    disturbance_bounds: np.ndarray
    name: str = "custom"
    description: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if int(self.n) < 1:
            raise ConfigError(f"plant order must be positive, got {self.n}")
        kc = np.asarray(self.constraint_bounds, dtype=float).reshape(-1)
        dm = np.asarray(self.disturbance_bounds, dtype=float).reshape(-1)
        if kc.shape != (self.n,) or dm.shape != (self.n,):
            raise ConfigError(f"constraint and disturbance bounds need length n={self.n}")
        if not np.all(kc > 0):
            raise ConfigError(f"constraint bounds must be positive, got {kc.tolist()}")
        if not np.all(dm >= 0):
            raise ConfigError(f"disturbance bounds must be non-negative, got {dm.tolist()}")
        object.__setattr__(self, "constraint_bounds", kc)
        object.__setattr__(self, "disturbance_bounds", dm)

    def check_disturbance_bounds(self, horizon, samples=2001):
        """Sample ``d(t)`` on ``[0, horizon]``; return the worst ``|d_i|`` per index."""
        worst = np.zeros(self.n)
        for t in np.linspace(0.0, horizon, samples):
            worst = np.maximum(worst, np.abs(np.asarray(self.disturbance(float(t)))))
        return worst


def eval_dynamics(model, x, u_eff, t):
    """State derivative ``f(x, u_eff) + d(t)``.

    Raises:
        SimulationDiverged: if any component is not finite (``index`` is
            ``None`` when the evaluation itself overflowed).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n,):
        raise ValueError(f"state must have length {model.n}, got shape {x.shape}")
    try:
        dx = np.asarray(model.dynamics(x, float(u_eff)), dtype=float) + np.asarray(model.disturbance(float(t)))
    except (OverflowError, ZeroDivisionError) as exc:
        raise SimulationDiverged(None, time=float(t)) from exc
    bad = np.flatnonzero(~np.isfinite(dx))
    if bad.size:
        raise SimulationDiverged(int(bad[0]) + 1, time=float(t))
    return dx


@jit
def _example_dynamics(x, u):
    out = np.empty(2)
    out[0] = 0.2 * x[0] + 10.0 * x[1]
    out[1] = (0.6 * math.exp(-x[0] ** 4 * x[1] ** 2)
              + (10.0 + 0.5 * math.exp(-x[1] ** 2)) * u
              + 0.4 * math.sin(u))
    return out


@jit
def _no_disturbance_2(t):
    return np.zeros(2)


def null_disturbance(n):
    """Disturbance generator returning zeros of length ``n``."""
    if n == 2:
        return _no_disturbance_2

    def no_disturbance(t):
        return np.zeros(n)
    return no_disturbance


def example_plant():
    """Second-order benchmark with state constraints ``|x1| <= 3.8``, ``|x2| <= 6``.

    ``dx1 = 0.2 x1 + 10 x2`` and
    ``dx2 = 0.6 exp(-x1^4 x2^2) + (10 + 0.5 exp(-x2^2)) u + 0.4 sin(u)``,
    undisturbed.
    """
    return PlantModel(
        n=2,
        dynamics=_example_dynamics,
        disturbance=_no_disturbance_2,
        constraint_bounds=np.array([3.8, 6.0]),
        disturbance_bounds=np.zeros(2),
        name="example",
    )


def plant_from_expressions(exprs: Sequence[str], constraint_bounds, disturbance: Optional[Sequence[str]] = None,
                           disturbance_bounds=None):
    """Build a plant from expression strings.

    ``exprs[i]`` is ``f_{i+1}`` written in ``x1..xn`` and ``u`` (the delayed
    input, only meaningful in the last entry).  ``disturbance`` entries are
    expressions in ``t``.
    """
    n = len(exprs)
    names = [f"x{k + 1}" for k in range(n)]
    parsed = []
    for i, text in enumerate(exprs):
        allowed = names[: i + 2] if i < n - 1 else names + ["u"]
        expr, _ = _expr.parse(text, allowed)
        parsed.append(expr)
    unpack = {name: f"x[{k}]" for k, name in enumerate(names)}
    dynamics = _expr.vector_function(parsed, ["x", "u"], unpack)

    if disturbance is None:
        dist_fn = null_disturbance(n)
        dist_text = ["0"] * n
    else:
        if len(disturbance) != n:
            raise ConfigError(f"need {n} disturbance expressions, got {len(disturbance)}")
        dist_fn = _expr.vector_function([_expr.parse(d, ["t"])[0] for d in disturbance], ["t"], {})
        dist_text = list(disturbance)
    if disturbance_bounds is None:
        disturbance_bounds = np.zeros(n)
    return PlantModel(n=n, dynamics=dynamics, disturbance=dist_fn,
                      constraint_bounds=np.asarray(constraint_bounds, dtype=float),
                      disturbance_bounds=np.asarray(disturbance_bounds, dtype=float),
                      name="expr", description={"f": list(exprs), "d": dist_text})


def delay_steps(tau, h):
    """Number of steps ``m`` with ``m * h == tau``; rejects non-integer ratios."""
    if not (tau > 0 and h > 0):
        raise ConfigError(f"delay and step must be positive (tau={tau}, h={h})")
    m = round(tau / h)
    if m < 1 or abs(m * h - tau) > 1e-9 * tau:
        raise ConfigError(f"delay tau={tau!r} is not an integer multiple of step h={h!r}")
    return int(m)


class DelayLine:
    """Ring buffer returning the control value pushed ``m`` pushes ago.

    Until ``m + 1`` values have been pushed, :meth:`read` returns
    ``fill_value`` (the pre-history of the input).
    """

    def __init__(self, tau, h, fill_value=0.0):
        self.tau = float(tau)
        self.h = float(h)
        self.m = delay_steps(self.tau, self.h)
        self.fill_value = float(fill_value)
        self.buffer = deque([self.fill_value] * (self.m + 1), maxlen=self.m + 1)

    def push(self, u):
        self.buffer.append(float(u))
        return self

    def read(self):
        return self.buffer[0]
