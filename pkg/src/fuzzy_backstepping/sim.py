"""Fixed-step closed-loop simulation.

The closed-loop state is one flat vector::

    [x_1..x_n, chi, u, w_2..w_{n+1}, delta_hat_1..n, theta_hat_1..n]

The plant is driven by the exactly delayed filter output ``u(t - tau)``
(``tau = m h``), read from a ring buffer and held over each RK4 step, while
the controller only sees its Pade intermediate ``chi``.

Two integration paths share this contract: a compiled kernel (default) and
a pure-Python path assembled from :func:`closed_loop_deriv`,
:func:`rk4_step` and :class:`~fuzzy_backstepping.plant.DelayLine`.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._jit import ENABLED as JIT_ENABLED, compile_function, numba
from .controller import (AdaptiveState, ControllerGains, ReferenceSignal, adaptation_derivs, adaptation_packed,
                         control_pass, control_pass_packed, fls_input, input_filter_deriv,
                         pade_intermediate_deriv, virtual_control_first, virtual_control_last,
                         virtual_control_mid)
from .errors import BarrierViolation, ConfigError, SimulationDiverged
from .fls import FuzzyBasis, basis, make_grid_basis, pack_bases, regressor_norm
from .plant import DelayLine, PlantModel, delay_steps, eval_dynamics

log = logging.getLogger(__name__)


def state_slices(n):
    """Named slices into the flat closed-loop state vector."""
    return {
        "x": slice(0, n),
        "chi": n,
        "u": n + 1,
        "w": slice(n + 2, 2 * n + 2),
        "delta_hat": slice(2 * n + 2, 3 * n + 2),
        "theta_hat": slice(3 * n + 2, 4 * n + 2),
    }


def unpack_state(s, n):
    """Split a flat state into ``(x, AdaptiveState)``."""
    sl = state_slices(n)
    adaptive = AdaptiveState(delta_hat=s[sl["delta_hat"]], theta_hat=s[sl["theta_hat"]],
                             w=s[sl["w"]], chi=s[sl["chi"]], u=s[sl["u"]])
    return np.asarray(s[sl["x"]], dtype=float), adaptive


def pack_state(x, adaptive):
    return np.concatenate([np.asarray(x, dtype=float), [adaptive.chi, adaptive.u], adaptive.w,
                           adaptive.delta_hat, adaptive.theta_hat])


def default_bases(plant, reference, counts=5, rate_ranges=None):
    """Grid bases over the constraint box.

    Level ``i`` takes ``(x_1..x_i, dw_i/dt)``.  State axes span ``+-k_cj``;
    the rate axis spans ``+-sup|dy_d/dt|`` for level 1 and ``+-rate_ranges[i-1]``
    (default ``k_ci`` per second) above it.
    """
    n = plant.n
    kc = plant.constraint_bounds
    if np.isscalar(counts):
        counts = [int(counts)] * n
    if len(counts) != n:
        raise ConfigError(f"need {n} FLS rule counts, got {len(counts)}")
    bases = []
    for level in range(1, n + 1):
        if rate_ranges is not None:
            rate = float(rate_ranges[level - 1])
        elif level == 1:
            rate = reference.A1 if reference.A1 > 0 else 1.0
        else:
            rate = float(kc[level - 1])
        ranges = [(-kc[j], kc[j]) for j in range(level)] + [(-rate, rate)]
        bases.append(make_grid_basis(ranges, [counts[level - 1]] * (level + 1)))
    return tuple(bases)


@dataclass
class SimConfig:
    """Everything needed to reproduce one closed-loop run.

    ``chi0`` defaults to ``2 u0``, the Pade equilibrium for a constant input,
    so ``chi - u`` starts at the pre-history value ``u0``.  Surface filters
    start at ``w_{i+1}(0) = alpha_i(0)``.
    """

    plant: PlantModel
    gains: ControllerGains
    reference: ReferenceSignal
    x0: np.ndarray
    delta_hat0: np.ndarray
    theta_hat0: np.ndarray
    tau: float = 0.01
    h: float = 1e-4
    T: float = 20.0
    u0: float = 0.0
    chi0: Optional[float] = None
    bases: Optional[Sequence[FuzzyBasis]] = None
    record_stride: int = 1

    def __post_init__(self):
        n = self.plant.n
        if self.gains.n != n:
            raise ConfigError(f"gains are for order {self.gains.n}, plant has order {n}")
        self.m = delay_steps(self.tau, self.h)
        self.gains = self.gains.resolve(self.tau)
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        self.delta_hat0 = np.asarray(self.delta_hat0, dtype=float).reshape(-1)
        self.theta_hat0 = np.asarray(self.theta_hat0, dtype=float).reshape(-1)
        problems = []
        if self.x0.shape != (n,):
            problems.append(f"x0 needs {n} entries")
        elif not np.all(np.abs(self.x0) < self.plant.constraint_bounds):
            problems.append(f"x0={self.x0.tolist()} violates state constraints {self.plant.constraint_bounds.tolist()}")
        for name in ("delta_hat0", "theta_hat0"):
            v = getattr(self, name)
            if v.shape != (n,) or not np.all(v > 0):
                problems.append(f"{name} needs {n} strictly positive entries")
        if not self.T > 0:
            problems.append(f"horizon T must be positive, got {self.T}")
        if int(self.record_stride) < 1:
            problems.append("record_stride must be >= 1")
        if problems:
            raise ConfigError("; ".join(problems), problems)
        self.record_stride = int(self.record_stride)
        if self.chi0 is None:
            self.chi0 = 2.0 * self.u0
        if self.bases is None:
            self.bases = default_bases(self.plant, self.reference)
        self.bases = tuple(self.bases)
        if len(self.bases) != n or any(b.dim != k + 2 for k, b in enumerate(self.bases)):
            raise ConfigError(f"need {n} fuzzy bases with input dimensions 2..{n + 1}")

    @property
    def steps(self):
        return int(round(self.T / self.h))


def init_filters(gains, bases, reference, delta_hat0, theta_hat0, *, x0=None, z0=None, t0=0.0, strict=True):
    """Initialize surface filters at ``w_{i+1}(0) = alpha_i(0)``.

    Give either the plant state ``x0`` or the tracking errors ``z0`` (then
    ``x_i = w_i + z_i`` is reconstructed level by level).  Returns
    ``(x, z, w)`` with ``z`` holding ``z_1..z_n``.

    Raises:
        ConfigError: if some ``|z_i(0)| >= k_bi``.  With ``strict=False`` the
            remaining entries are returned as NaN instead.
    """
    n = gains.n
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    z = np.zeros(n)
    w = np.zeros(n)
    adaptive = AdaptiveState(delta_hat0, theta_hat0, w, chi=0.0, u=0.0)
    w_dot = np.zeros(n)
    y_ref, y_ref_dot = reference.y_d(t0), reference.y_d_dot(t0)
    for level in range(1, n + 1):
        k = level - 1
        w_level = y_ref if level == 1 else w[k - 1]
        if z0 is not None:
            z[k] = z0[k]
            x[k] = w_level + z[k]
        else:
            z[k] = x[k] - w_level
        xi_sq = regressor_norm(basis(bases[k], fls_input(x, level, y_ref_dot, w_dot)))
        try:
            if level == 1:
                alpha = virtual_control_first(z[0], xi_sq, adaptive, gains)
            elif level < n:
                alpha = virtual_control_mid(level, z[k - 1], z[k], xi_sq, adaptive, gains)
            else:
                alpha = virtual_control_last(z[k - 1], z[k], xi_sq, adaptive, gains)
        except BarrierViolation as exc:
            if not strict:
                z[k + 1:] = np.nan
                w[k:] = np.nan
                if z0 is not None:
                    x[k + 1:] = np.nan
                return x, z, w
            raise ConfigError(f"initial condition violates barrier: |z{exc.index}(0)|={abs(exc.z):.6g} "
                              f">= k_b{exc.index}={exc.kb:.6g}") from exc
        w[k] = alpha
    return x, z, w


def initial_state(cfg):
    """Flat closed-loop state at ``t = 0`` for ``cfg``."""
    x, _, w = init_filters(cfg.gains, cfg.bases, cfg.reference, cfg.delta_hat0, cfg.theta_hat0, x0=cfg.x0)
    adaptive = AdaptiveState(cfg.delta_hat0.copy(), cfg.theta_hat0.copy(), w, chi=cfg.chi0, u=cfg.u0)
    return pack_state(x, adaptive)


def closed_loop_deriv(state, t, u_delayed, cfg):
    """Time derivative of the flat closed-loop state.

    All controller quantities come from a single :func:`control_pass`, the
    plant sees ``u_delayed`` as its input.
    """
    n = cfg.plant.n
    x, adaptive = unpack_state(np.asarray(state, dtype=float), n)
    out = control_pass(x, adaptive, t, cfg.reference, cfg.gains, cfg.bases)
    dx = eval_dynamics(cfg.plant, x, u_delayed, t)
    d_delta = np.empty(n)
    d_theta = np.empty(n)
    for level in range(1, n + 1):
        d_delta[level - 1], d_theta[level - 1] = adaptation_derivs(level, out.z[level - 1], out.xi_sq[level - 1],
                                                                   adaptive, cfg.gains)
    d_chi = pade_intermediate_deriv(adaptive.chi, adaptive.u, cfg.gains.lam)
    d_u = input_filter_deriv(adaptive.u, out.v, cfg.gains.kappa)
    return np.concatenate([dx, [d_chi, d_u], out.w_dot, d_delta, d_theta])


def rk4_step(state, t, h, derivs):
    """One classical Runge-Kutta step of ``dy/dt = derivs(y, t)``."""
    k1 = derivs(state, t)
    k2 = derivs(state + 0.5 * h * k1, t + 0.5 * h)
    k3 = derivs(state + 0.5 * h * k2, t + 0.5 * h)
    k4 = derivs(state + h * k3, t + h)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def record_columns(n):
    """Column slices of the raw record array produced by both integrators."""
    names = [("t", 1), ("y_ref", 1), ("x", n), ("z", n + 1), ("e", n), ("w", n), ("chi", 1), ("u", 1),
             ("u_delayed", 1), ("alpha", n), ("v", 1), ("delta_hat", n), ("theta_hat", n), ("xi_sq", n)]
    cols, start = {}, 0
    for name, width in names:
        cols[name] = slice(start, start + width) if width > 1 or name in ("x", "z", "e", "w", "alpha",
                                                                           "delta_hat", "theta_hat",
                                                                           "xi_sq") else start
        start += width
    cols["width"] = start
    return cols


@dataclass
class Trajectory:
    """Uniformly sampled closed-loop record.

    Matrix fields have one column per index (``z`` has ``n + 1``).
    ``u_delayed`` is the plant input actually applied from each sample time.
    """

    t: np.ndarray
    y_ref: np.ndarray
    x: np.ndarray
    z: np.ndarray
    e: np.ndarray
    w: np.ndarray
    chi: np.ndarray
    u: np.ndarray
    u_delayed: np.ndarray
    alpha: np.ndarray
    v: np.ndarray
    delta_hat: np.ndarray
    theta_hat: np.ndarray
    xi_sq: np.ndarray
    kb: np.ndarray
    kc: np.ndarray
    tau: float = 0.0
    h: float = 0.0
    stride: int = 1

    @classmethod
    def from_records(cls, rec, n, kb, kc, tau=0.0, h=0.0, stride=1):
        cols = record_columns(n)
        rec = np.asarray(rec, dtype=float)
        data = {name: rec[:, sl].copy() for name, sl in cols.items() if name != "width"}
        return cls(**data, kb=np.asarray(kb, dtype=float), kc=np.asarray(kc, dtype=float),
                   tau=tau, h=h, stride=stride)

    @property
    def n(self):
        return self.x.shape[1]

    @property
    def barrier_margins(self):
        """``k_bi^2 - z_i^2`` for ``i = 1..n``."""
        return self.kb ** 2 - self.z[:, : self.n] ** 2

    @property
    def Vs(self):
        return lyapunov_surrogate(self)

    def __len__(self):
        return self.t.size


def lyapunov_surrogate(traj):
    """Computable Lyapunov surrogate.

    ``sum_i ln(k_bi^2 / (k_bi^2 - z_i^2)) + z_{n+1}^2 + sum_i e_{i+1}^2``;
    the unknown control-gain weights are left out.
    """
    n = traj.n
    kb2 = traj.kb ** 2
    zn = traj.z[:, :n]
    barrier = np.sum(np.log(kb2 / (kb2 - zn ** 2)), axis=1)
    return barrier + traj.z[:, n] ** 2 + np.sum(traj.e ** 2, axis=1)


@dataclass
class ConstraintReport:
    """Per-index constraint check of a trajectory (arrays indexed from level 1)."""

    sup_x: np.ndarray
    sup_z: np.ndarray
    rho: np.ndarray
    kc: np.ndarray
    kb: np.ndarray
    x_ok: np.ndarray = field(init=False)
    z_ok: np.ndarray = field(init=False)
    chain_ok: np.ndarray = field(init=False)
    prerequisite_ok: np.ndarray = field(init=False)
    pointwise_chain: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x_ok = self.sup_x < self.kc
        self.z_ok = self.sup_z < self.kb
        chain = self.sup_z < self.kb
        if self.pointwise_chain is not None:
            chain = chain & self.pointwise_chain
        self.chain_ok = chain
        self.prerequisite_ok = self.kb + self.rho <= self.kc

    @property
    def x_margin(self):
        return self.kc - self.sup_x

    @property
    def z_margin(self):
        return self.kb - self.sup_z

    @property
    def chain_bound(self):
        """``k_bi + rho_i``, the bound on ``|x_i|`` implied by ``|x_i| <= |z_i| + |w_i|``."""
        return self.kb + self.rho

    @property
    def passed(self):
        return bool(np.all(self.x_ok) and np.all(self.z_ok))

    def to_dict(self):
        return {
            "passed": self.passed,
            "sup_x": self.sup_x.tolist(), "kc": self.kc.tolist(), "x_margin": self.x_margin.tolist(),
            "x_ok": self.x_ok.tolist(),
            "sup_z": self.sup_z.tolist(), "kb": self.kb.tolist(), "z_margin": self.z_margin.tolist(),
            "z_ok": self.z_ok.tolist(),
            "rho": self.rho.tolist(), "chain_bound": self.chain_bound.tolist(),
            "chain_ok": self.chain_ok.tolist(), "prerequisite_ok": self.prerequisite_ok.tolist(),
        }

    def summary(self):
        lines = []
        for i in range(self.sup_x.size):
            lines.append(
                f"x{i + 1}: sup|x|={self.sup_x[i]:.6g} k_c={self.kc[i]:.6g} margin={self.x_margin[i]:.6g} "
                f"{'ok' if self.x_ok[i] else 'VIOLATED'}")
            lines.append(
                f"z{i + 1}: sup|z|={self.sup_z[i]:.6g} k_b={self.kb[i]:.6g} margin={self.z_margin[i]:.6g} "
                f"{'ok' if self.z_ok[i] else 'VIOLATED'}")
            lines.append(
                f"    |x{i + 1}| <= |z{i + 1}| + |w{i + 1}| < k_b + rho = {self.chain_bound[i]:.6g} "
                f"(rho={self.rho[i]:.6g}) {'holds' if self.chain_ok[i] else 'FAILS'}; "
                f"k_b + rho <= k_c {'holds' if self.prerequisite_ok[i] else 'fails'}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def check_constraints(traj, kc=None, kb=None):
    """Compare a trajectory against state constraints ``kc`` and barriers ``kb``.

    ``rho_i = sup|w_i|`` uses ``w_1 = y_d``; the chain
    ``|x_i| <= |z_i| + |w_i|`` is also verified sample by sample.
    """
    kc = traj.kc if kc is None else np.asarray(kc, dtype=float)
    kb = traj.kb if kb is None else np.asarray(kb, dtype=float)
    n = traj.n
    w_full = np.column_stack([traj.y_ref, traj.w[:, : n - 1]])
    abs_x = np.abs(traj.x)
    sup_x = abs_x.max(axis=0)
    sup_z = np.abs(traj.z[:, :n]).max(axis=0)
    rho = np.abs(w_full).max(axis=0)
    tri = abs_x <= np.abs(traj.z[:, :n]) + np.abs(w_full) + 1e-12 * (1.0 + abs_x)
    return ConstraintReport(sup_x=sup_x, sup_z=sup_z, rho=rho, kc=kc, kb=kb, pointwise_chain=tri.all(axis=0))


# ---------------------------------------------------------------- compiled kernel

_OK, _BARRIER, _DIVERGED, _NEGATIVE = 0, 1, 2, 3


def _build_kernel(dynamics, disturbance, y_ref_fn, y_ref_dot_fn):
    dynamics = compile_function(dynamics)
    disturbance = compile_function(disturbance)
    y_ref_fn = compile_function(y_ref_fn)
    y_ref_dot_fn = compile_function(y_ref_dot_fn)
    control = control_pass_packed
    adapt = adaptation_packed

    def deriv(s, t, ud, n, g, centers, inv_scale, offsets, alpha, z, e, w_dot, xi_sq, zbuf, d_dh, d_th, out):
        x = s[0:n]
        chi = s[n]
        u = s[n + 1]
        w = s[n + 2:2 * n + 2]
        dh = s[2 * n + 2:3 * n + 2]
        th = s[3 * n + 2:4 * n + 2]
        v, bad = control(x, chi, u, w, dh, th, y_ref_fn(t), y_ref_dot_fn(t), n, g, centers, inv_scale, offsets,
                         alpha, z, e, w_dot, xi_sq, zbuf)
        if bad >= 0:
            return _BARRIER, bad
        fx = dynamics(x, ud)
        dx = disturbance(t)
        for i in range(n):
            out[i] = fx[i] + dx[i]
            if not math.isfinite(out[i]):
                return _DIVERGED, i
        kappa = g[7 * n + 1]
        lam = g[7 * n + 2]
        out[n] = -lam * chi + 2.0 * lam * u
        out[n + 1] = -kappa * u + v
        adapt(z, xi_sq, dh, th, n, g, d_dh, d_th)
        for i in range(n):
            out[n + 2 + i] = w_dot[i]
            out[2 * n + 2 + i] = d_dh[i]
            out[3 * n + 2 + i] = d_th[i]
        for j in range(n, 4 * n + 2):
            if not math.isfinite(out[j]):
                return _DIVERGED, j
        return _OK, 0

    def record(s, t, ud, n, g, centers, inv_scale, offsets, alpha, z, e, w_dot, xi_sq, zbuf, row):
        x = s[0:n]
        chi = s[n]
        u = s[n + 1]
        w = s[n + 2:2 * n + 2]
        dh = s[2 * n + 2:3 * n + 2]
        th = s[3 * n + 2:4 * n + 2]
        yr = y_ref_fn(t)
        v, bad = control(x, chi, u, w, dh, th, yr, y_ref_dot_fn(t), n, g, centers, inv_scale, offsets,
                         alpha, z, e, w_dot, xi_sq, zbuf)
        if bad >= 0:
            return _BARRIER, bad
        row[0] = t
        row[1] = yr
        c = 2
        for i in range(n):
            row[c + i] = x[i]
        c += n
        for i in range(n + 1):
            row[c + i] = z[i]
        c += n + 1
        for i in range(n):
            row[c + i] = e[i]
        c += n
        for i in range(n):
            row[c + i] = w[i]
        c += n
        row[c] = chi
        row[c + 1] = u
        row[c + 2] = ud
        c += 3
        for i in range(n):
            row[c + i] = alpha[i]
        c += n
        row[c] = v
        c += 1
        for i in range(n):
            row[c + i] = dh[i]
            row[c + n + i] = th[i]
            row[c + 2 * n + i] = xi_sq[i]
        return _OK, 0

    if JIT_ENABLED:
        deriv = numba.njit(deriv)
        record = numba.njit(record)

    def run(s0, h, nsteps, m, stride, u_fill, n, g, centers, inv_scale, offsets, rec):
        dim = 4 * n + 2
        s = s0.copy()
        tmp = np.empty(dim)
        k1 = np.empty(dim)
        k2 = np.empty(dim)
        k3 = np.empty(dim)
        k4 = np.empty(dim)
        alpha = np.empty(n)
        z = np.empty(n + 1)
        e = np.empty(n)
        w_dot = np.empty(n)
        xi_sq = np.empty(n)
        zbuf = np.empty(n + 1)
        d_dh = np.empty(n)
        d_th = np.empty(n)
        ring = np.full(m + 1, u_fill)
        pos = 0
        ring[pos] = s[n + 1]
        pos = (pos + 1) % (m + 1)
        kind, idx = record(s, 0.0, ring[pos], n, g, centers, inv_scale, offsets, alpha, z, e, w_dot, xi_sq,
                           zbuf, rec[0])
        if kind != _OK:
            return 0, kind, idx, 0.0, s, z
        nrec = 1
        for k in range(nsteps):
            t = k * h
            ud = ring[pos]
            kind, idx = deriv(s, t, ud, n, g, centers, inv_scale, offsets, alpha, z, e, w_dot, xi_sq, zbuf,
                              d_dh, d_th, k1)
            if kind != _OK:
                return nrec, kind, idx, t, s, z
            for j in range(dim):
                tmp[j] = s[j] + 0.5 * h * k1[j]
            kind, idx = deriv(tmp, t + 0.5 * h, ud, n, g, centers, inv_scale, offsets, alpha, z, e, w_dot, xi_sq,
                              zbuf, d_dh, d_th, k2)
            if kind != _OK:
                return nrec, kind, idx, t + 0.5 * h, s, z
            for j in range(dim):
                tmp[j] = s[j] + 0.5 * h * k2[j]
            kind, idx = deriv(tmp, t + 0.5 * h, ud, n, g, centers, inv_scale, offsets, alpha, z, e, w_dot, xi_sq,
                              zbuf, d_dh, d_th, k3)
            if kind != _OK:
                return nrec, kind, idx, t + 0.5 * h, s, z
            for j in range(dim):
                tmp[j] = s[j] + h * k3[j]
            kind, idx = deriv(tmp, t + h, ud, n, g, centers, inv_scale, offsets, alpha, z, e, w_dot, xi_sq,
                              zbuf, d_dh, d_th, k4)
            if kind != _OK:
                return nrec, kind, idx, t + h, s, z
            t_next = (k + 1) * h
            for j in range(dim):
                s[j] = s[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
                if not math.isfinite(s[j]):
                    return nrec, _DIVERGED, j, t_next, s, z
            for j in range(2 * n + 2, 4 * n + 2):
                if s[j] < 0.0:
                    return nrec, _NEGATIVE, j, t_next, s, z
            ring[pos] = s[n + 1]
            pos = (pos + 1) % (m + 1)
            if (k + 1) % stride == 0:
                kind, idx = record(s, t_next, ring[pos], n, g, centers, inv_scale, offsets, alpha, z, e, w_dot,
                                   xi_sq, zbuf, rec[nrec])
                if kind != _OK:
                    return nrec, kind, idx, t_next, s, z
                nrec += 1
        return nrec, _OK, 0, nsteps * h, s, z

    if JIT_ENABLED:
        run = numba.njit(run)
    return run


_KERNELS = {}


def _kernel_for(plant, reference):
    key = (plant.dynamics, plant.disturbance, reference.y_d, reference.y_d_dot)
    kernel = _KERNELS.get(key)
    if kernel is None:
        kernel = _KERNELS[key] = _build_kernel(*key)
    return kernel


class PositivityLost(AssertionError):
    """An adaptation estimate became negative (integration failure)."""


def _raise_for(kind, idx, t_fail, n, cfg, traj, z=None):
    if kind == _BARRIER:
        raise BarrierViolation(idx + 1, z, cfg.gains.kb[idx], time=t_fail, trajectory=traj)
    if kind == _DIVERGED:
        raise SimulationDiverged(idx + 1, time=t_fail, trajectory=traj)
    if kind == _NEGATIVE:
        which = "delta_hat" if idx < 3 * n + 2 else "theta_hat"
        level = (idx - (2 * n + 2)) % n + 1
        raise PositivityLost(f"{which}{level} became negative at t={t_fail:.6g}")


def _simulate_compiled(cfg, s0):
    n = cfg.plant.n
    kernel = _kernel_for(cfg.plant, cfg.reference)
    centers, inv_scale, offsets = pack_bases(cfg.bases)
    nsteps = cfg.steps
    rec = np.empty((nsteps // cfg.record_stride + 1, record_columns(n)["width"]))
    try:
        nrec, kind, idx, t_fail, _, z_last = kernel(s0, cfg.h, nsteps, cfg.m, cfg.record_stride, float(cfg.u0), n,
                                                    cfg.gains.packed(), centers, inv_scale, offsets, rec)
    except (OverflowError, ZeroDivisionError) as exc:
        raise SimulationDiverged(None) from exc
    traj = Trajectory.from_records(rec[:nrec], n, cfg.gains.kb, cfg.plant.constraint_bounds, cfg.tau, cfg.h,
                                   cfg.record_stride)
    _raise_for(kind, idx, t_fail, n, cfg, traj, z_last[idx] if kind == _BARRIER else None)
    return traj


def _record_row(s, t, ud, cfg):
    n = cfg.plant.n
    x, adaptive = unpack_state(s, n)
    out = control_pass(x, adaptive, t, cfg.reference, cfg.gains, cfg.bases)
    return np.concatenate([[t, cfg.reference.y_d(t)], x, out.z, out.e, adaptive.w, [adaptive.chi, adaptive.u, ud],
                           out.alpha, [out.v], adaptive.delta_hat, adaptive.theta_hat, out.xi_sq])


def _simulate_python(cfg, s0):
    n = cfg.plant.n
    line = DelayLine(cfg.tau, cfg.h, fill_value=cfg.u0)
    line.push(s0[n + 1])
    rows = [_record_row(s0, 0.0, line.read(), cfg)]
    s = s0.copy()

    def partial():
        return Trajectory.from_records(np.array(rows), n, cfg.gains.kb, cfg.plant.constraint_bounds, cfg.tau,
                                       cfg.h, cfg.record_stride)

    h = cfg.h
    for k in range(cfg.steps):
        t = k * h
        ud = line.read()
        try:
            s = rk4_step(s, t, h, lambda y, tt: closed_loop_deriv(y, tt, ud, cfg))
        except (BarrierViolation, SimulationDiverged) as exc:
            exc.trajectory = partial()
            raise
        t_next = (k + 1) * h
        bad = np.flatnonzero(~np.isfinite(s))
        if bad.size:
            raise SimulationDiverged(int(bad[0]) + 1, time=t_next, trajectory=partial())
        negative = np.flatnonzero(s[2 * n + 2:] < 0)
        if negative.size:
            _raise_for(_NEGATIVE, int(negative[0]) + 2 * n + 2, t_next, n, cfg, partial())
        line.push(s[n + 1])
        if (k + 1) % cfg.record_stride == 0:
            try:
                rows.append(_record_row(s, t_next, line.read(), cfg))
            except BarrierViolation as exc:
                exc.trajectory = partial()
                raise
    return partial()


def simulate(cfg, backend="auto"):
    """Integrate ``cfg`` over ``[0, T]`` and return the recorded trajectory.

    ``backend`` is ``"compiled"``, ``"python"`` or ``"auto"`` (compiled, with
    a fallback to Python when the plant or reference cannot be compiled).

    Raises:
        ConfigError: initial condition outside a barrier.
        BarrierViolation: with time and index; ``.trajectory`` holds the
            samples recorded so far.
        SimulationDiverged: likewise.
    """
    s0 = initial_state(cfg)
    if backend == "python":
        return _simulate_python(cfg, s0)
    if backend not in ("auto", "compiled"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "auto" and JIT_ENABLED:
        try:
            return _simulate_compiled(cfg, s0)
        except numba.core.errors.TypingError as exc:
            log.warning("plant/reference not compilable, using the Python integrator: %s", exc)
            return _simulate_python(cfg, s0)
    return _simulate_compiled(cfg, s0)
