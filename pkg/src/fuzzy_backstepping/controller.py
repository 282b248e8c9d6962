"""Adaptive fuzzy backstepping laws with barrier Lyapunov shaping.

For a plant of order ``n`` the controller keeps, per level ``i = 1..n``,
two positive scalar estimates (``delta_hat_i`` for the robust compensator,
``theta_hat_i`` for the lumped fuzzy-weight norm), one first-order surface
filter ``w_{i+1}`` smoothing the virtual control ``alpha_i``, plus the Pade
intermediate ``chi`` and the filtered plant input ``u``.

Coordinates::

    z_1 = x_1 - y_d,  z_i = x_i - w_i,  z_{n+1} = chi - u - w_{n+1}
    e_{i+1} = w_{i+1} - alpha_i

Every operation taking an index ``i`` uses the 1-based numbering above.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from . import _expr
from ._jit import jit
from .errors import BarrierViolation, ConfigError
from .fls import basis, regressor_norm, xi_sq_packed

BARRIER_EPS = 1e-9


def _vec(name, value, length, strict=True):
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (length,):
        raise ConfigError(f"{name} needs {length} entries, got {arr.size}")
    ok = arr > 0 if strict else arr >= 0
    if not np.all(ok):
        raise ConfigError(f"{name} must be {'positive' if strict else 'non-negative'}, got {arr.tolist()}")
    return arr


@dataclass(frozen=True)
class ControllerGains:
    """Design constants.

    ``K`` has ``n + 1`` entries (the last one drives ``z_{n+1}``);
    ``filter_tau`` holds the surface-filter time constants ``tau_2..tau_{n+1}``.
    ``lam`` is the Pade constant; ``None`` means ``2 / tau`` once the delay is
    known (see :meth:`resolve`).  ``a`` is informational only.
    """

    K: np.ndarray
    kb: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    upsilon: np.ndarray
    filter_tau: np.ndarray
    kappa: float
    lam: Optional[float] = None
    a: Optional[np.ndarray] = None

    def __post_init__(self):
        n = np.asarray(self.kb).size
        if n < 1:
            raise ConfigError("kb must have at least one entry")
        object.__setattr__(self, "K", _vec("K", self.K, n + 1))
        for name in ("kb", "sigma", "gamma", "beta", "upsilon", "filter_tau"):
            object.__setattr__(self, name, _vec(name, getattr(self, name), n))
        if self.a is not None:
            object.__setattr__(self, "a", _vec("a", self.a, n))
        if not (self.kappa >= 0 and math.isfinite(self.kappa)):
            raise ConfigError(f"kappa must be >= 0, got {self.kappa}")
        object.__setattr__(self, "kappa", float(self.kappa))
        if self.lam is not None:
            if not self.lam > 0:
                raise ConfigError(f"lam must be positive, got {self.lam}")
            object.__setattr__(self, "lam", float(self.lam))

    @property
    def n(self):
        return self.kb.size

    def resolve(self, tau):
        """Return gains with ``lam`` filled in as ``2 / tau`` if it was unset."""
        if self.lam is not None:
            return self
        return replace(self, lam=2.0 / tau)

    def packed(self):
        """Flat array ``[K, kb, sigma, gamma, beta, upsilon, filter_tau, kappa, lam]``."""
        if self.lam is None:
            raise ConfigError("lam is unresolved; call resolve(tau) first")
        return np.concatenate([self.K, self.kb, self.sigma, self.gamma, self.beta,
                               self.upsilon, self.filter_tau, [self.kappa, self.lam]])


@dataclass
class AdaptiveState:
    """Controller-side states; arrays are indexed from 0 for level 1."""

    delta_hat: np.ndarray
    theta_hat: np.ndarray
    w: np.ndarray
    chi: float
    u: float

    def __post_init__(self):
        self.delta_hat = np.asarray(self.delta_hat, dtype=float)
        self.theta_hat = np.asarray(self.theta_hat, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        self.chi = float(self.chi)
        self.u = float(self.u)


def sup_abs(fn, horizon, samples=20001):
    """Supremum of ``|fn(t)|`` on ``[0, horizon]``.

    Dense sampling followed by a bounded scalar refinement around the best
    sample.
    """
    ts = np.linspace(0.0, horizon, samples)
    vals = np.array([abs(fn(float(t))) for t in ts])
    k = int(np.argmax(vals))
    dt = ts[1] - ts[0] if samples > 1 else horizon
    lo, hi = max(0.0, ts[k] - dt), min(horizon, ts[k] + dt)
    best = vals[k]
    if hi > lo:
        res = minimize_scalar(lambda s: -abs(fn(float(s))), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-13})
        best = max(best, -res.fun)
    return float(best)


@dataclass(frozen=True)
class ReferenceSignal:
    """Desired output with its first two derivatives.

    ``A0`` bounds ``|y_d|`` on the horizon; ``C0`` bounds
    ``y_d^2 + y_d'^2 + y_d''^2``.
    """

    y_d: Callable
    y_d_dot: Callable
    y_d_ddot: Callable
    A0: float
    C0: float
    expression: str = ""
    horizon: float = 0.0
    A1: float = field(default=0.0, compare=False)

    @classmethod
    def from_expression(cls, text, horizon):
        """Parse ``text`` (a function of ``t``) and differentiate it symbolically."""
        expr, syms = _expr.parse(text, ["t"])
        t = syms["t"]
        d1 = expr.diff(t)
        d2 = d1.diff(t)
        f0, f1, f2 = (_expr.scalar_function(e, "t") for e in (expr, d1, d2))
        A0 = sup_abs(f0, horizon)
        A1 = sup_abs(f1, horizon)
        energy = _expr.scalar_function(expr ** 2 + d1 ** 2 + d2 ** 2, "t")
        C0 = sup_abs(energy, horizon)
        return cls(f0, f1, f2, A0, C0, expression=str(text), horizon=float(horizon), A1=A1)


def example_reference(horizon=20.0):
    """``y_d = 1.5 sin t + cos t``."""
    return ReferenceSignal.from_expression("1.5*sin(t) + cos(t)", horizon)


@dataclass
class ControlOutput:
    """Result of one controller evaluation.

    ``z`` has ``n + 1`` entries, ``alpha``, ``e`` (``e_2..e_{n+1}``),
    ``w_dot`` and ``xi_sq`` have ``n``.
    """

    alpha: np.ndarray
    v: float
    z: np.ndarray
    e: np.ndarray
    barrier_margins: np.ndarray
    w_dot: np.ndarray
    xi_sq: np.ndarray


def barrier_gap(z, kb, index=None, time=None):
    """``kb**2 - z**2``, raising :class:`BarrierViolation` at the singularity."""
    q = kb * kb - z * z
    if q <= BARRIER_EPS * kb * kb:
        raise BarrierViolation(index, z, kb, time=time)
    return q


def tracking_coordinates(x, state, y_ref, alpha):
    """Coordinates ``z_1..z_{n+1}`` and surface errors ``e_2..e_{n+1}``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    z = np.empty(n + 1)
    z[0] = x[0] - y_ref
    z[1:n] = x[1:] - state.w[: n - 1]
    z[n] = state.chi - state.u - state.w[n - 1]
    e = state.w - np.asarray(alpha, dtype=float)
    return z, e


def robust_tanh_term(p, upsilon):
    """Smooth sign surrogate ``tanh(p / upsilon)`` used by the robust compensator."""
    return math.tanh(p / upsilon)


def _alpha_core(i, z, q, xi_sq, state, gains):
    p = z / q
    return (-gains.K[i] * z - state.theta_hat[i] * xi_sq * p
            - state.delta_hat[i] * robust_tanh_term(p, gains.upsilon[i]))


def virtual_control_first(z1, xi_sq, state, gains):
    """``alpha_1``: proportional, fuzzy damping, robust and barrier terms."""
    q = barrier_gap(z1, gains.kb[0], index=1)
    return _alpha_core(0, z1, q, xi_sq, state, gains) - z1 / q


def virtual_control_mid(i, z_prev, z_i, xi_sq, state, gains):
    """``alpha_i`` for ``2 <= i <= n - 1``; adds the cross term from level ``i - 1``."""
    q_prev = barrier_gap(z_prev, gains.kb[i - 2], index=i - 1)
    q = barrier_gap(z_i, gains.kb[i - 1], index=i)
    return _alpha_core(i - 1, z_i, q, xi_sq, state, gains) - z_i / q - q * z_prev / q_prev


def virtual_control_last(z_prev, z_n, xi_sq, state, gains):
    """``alpha_n``: like the middle levels but without the ``-z_n / q_n`` term."""
    n = gains.n
    q_prev = barrier_gap(z_prev, gains.kb[n - 2], index=n - 1)
    q = barrier_gap(z_n, gains.kb[n - 1], index=n)
    return _alpha_core(n - 1, z_n, q, xi_sq, state, gains) - q * z_prev / q_prev


def control_v(z_last, e_last, state, gains):
    """Low-pass filter drive ``v`` (input of ``du/dt = -kappa u + v``)."""
    lam = gains.lam
    if lam is None:
        raise ConfigError("lam is unresolved; call gains.resolve(tau) first")
    return (-gains.K[-1] * z_last + lam * state.chi - (2.0 * lam + gains.kappa) * state.u
            - e_last / gains.filter_tau[-1])


def adaptation_derivs(i, z_i, xi_sq, state, gains):
    """``(d delta_hat_i / dt, d theta_hat_i / dt)`` with sigma-modification leakage."""
    k = i - 1
    q = barrier_gap(z_i, gains.kb[k], index=i)
    p = z_i / q
    d_delta = gains.gamma[k] * p * robust_tanh_term(p, gains.upsilon[k]) - gains.sigma[k] * gains.gamma[k] * state.delta_hat[k]
    d_theta = gains.beta[k] * z_i * z_i * xi_sq / q - gains.sigma[k] * gains.beta[k] * state.theta_hat[k]
    return d_delta, d_theta


def dsc_filter_deriv(w, alpha, tau):
    """First-order surface filter ``tau dw/dt + w = alpha``."""
    return (alpha - w) / tau


def pade_intermediate_deriv(chi, u, lam):
    """First-order Pade intermediate; ``chi - u`` approximates ``u(t - 2/lam)``."""
    return -lam * chi + 2.0 * lam * u


def input_filter_deriv(u, v, kappa):
    return -kappa * u + v


def fls_input(x, level, y_ref_dot, w_dot):
    """Fuzzy input for ``level`` (1-based): ``(x_1..x_i, dw_i/dt)`` with ``dw_1/dt = dy_d/dt``."""
    rate = y_ref_dot if level == 1 else w_dot[level - 2]
    return np.append(np.asarray(x[:level], dtype=float), rate)


def control_pass(x, state, t, reference, gains, bases):
    """Evaluate every law once at ``(x, state, t)``.

    Virtual controls are built level by level so the filter rate
    ``dw_i/dt = (alpha_{i-1} - w_i) / tau_i`` feeding the next fuzzy input is
    available algebraically.

    Raises:
        BarrierViolation: with the offending 1-based index and ``time=t``.
    """
    x = np.asarray(x, dtype=float)
    n = gains.n
    y_ref = reference.y_d(t)
    y_ref_dot = reference.y_d_dot(t)
    alpha = np.empty(n)
    w_dot = np.empty(n)
    xi_sq = np.empty(n)
    z = np.empty(n + 1)
    z[0] = x[0] - y_ref
    z[1:n] = x[1:] - state.w[: n - 1]
    try:
        for level in range(1, n + 1):
            k = level - 1
            xi_sq[k] = regressor_norm(basis(bases[k], fls_input(x, level, y_ref_dot, w_dot)))
            if level == 1:
                alpha[k] = virtual_control_first(z[0], xi_sq[k], state, gains)
            elif level < n:
                alpha[k] = virtual_control_mid(level, z[k - 1], z[k], xi_sq[k], state, gains)
            else:
                alpha[k] = virtual_control_last(z[k - 1], z[k], xi_sq[k], state, gains)
            w_dot[k] = dsc_filter_deriv(state.w[k], alpha[k], gains.filter_tau[k])
    except BarrierViolation as exc:
        exc.time = t
        raise
    z[n] = state.chi - state.u - state.w[n - 1]
    e = state.w - alpha
    v = control_v(z[n], e[n - 1], state, gains)
    margins = gains.kb ** 2 - z[:n] ** 2
    return ControlOutput(alpha=alpha, v=v, z=z, e=e, barrier_margins=margins, w_dot=w_dot, xi_sq=xi_sq)


@jit
def control_pass_packed(x, chi, u, w, dh, th, y_ref, y_ref_dot, n, g, centers, inv_scale, offsets,
                        alpha, z, e, w_dot, xi_sq, zbuf):
    """Array-only twin of :func:`control_pass` used by the compiled simulator.

    ``g`` is :meth:`ControllerGains.packed`.  Writes into the output arrays and
    returns ``(v, bad)`` where ``bad`` is the 0-based index of a violated
    barrier or ``-1``.
    """
    o_kb = n + 1
    o_ups = 5 * n + 1
    o_tau = 6 * n + 1
    kappa = g[7 * n + 1]
    lam = g[7 * n + 2]
    q_prev = 1.0
    for i in range(n):
        if i == 0:
            z[0] = x[0] - y_ref
        else:
            z[i] = x[i] - w[i - 1]
        kb = g[o_kb + i]
        q = kb * kb - z[i] * z[i]
        if q <= 1e-9 * kb * kb:
            return 0.0, i
        for k in range(i + 1):
            zbuf[k] = x[k]
        if i == 0:
            zbuf[1] = y_ref_dot
        else:
            zbuf[i + 1] = w_dot[i - 1]
        xs = xi_sq_packed(centers, inv_scale, offsets[i], offsets[i + 1], zbuf, i + 2)
        xi_sq[i] = xs
        p = z[i] / q
        a = -g[i] * z[i] - th[i] * xs * p - dh[i] * math.tanh(p / g[o_ups + i])
        if i < n - 1 or n == 1:
            a -= p
        if i > 0:
            a -= q * z[i - 1] / q_prev
        alpha[i] = a
        w_dot[i] = (a - w[i]) / g[o_tau + i]
        e[i] = w[i] - a
        q_prev = q
    z[n] = chi - u - w[n - 1]
    v = -g[n] * z[n] + lam * chi - (2.0 * lam + kappa) * u - e[n - 1] / g[o_tau + n - 1]
    return v, -1


@jit
def adaptation_packed(z, xi_sq, dh, th, n, g, d_dh, d_th):
    """Array-only twin of :func:`adaptation_derivs` for all levels at once."""
    o_kb = n + 1
    for i in range(n):
        kb = g[o_kb + i]
        q = kb * kb - z[i] * z[i]
        p = z[i] / q
        sig = g[2 * n + 1 + i]
        gam = g[3 * n + 1 + i]
        beta = g[4 * n + 1 + i]
        ups = g[5 * n + 1 + i]
        d_dh[i] = gam * p * math.tanh(p / ups) - sig * gam * dh[i]
        d_th[i] = beta * z[i] * p * xi_sq[i] - sig * beta * th[i]
