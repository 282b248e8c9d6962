"""A-priori prerequisite checks and the constrained gain search.

The free design vector is ``sigma = (K_1..K_{n-1}, k_b2..k_bn)``.  A
candidate is feasible when, over a finite set of initial states,

* ``k_bi > |z_i(0)|`` for every level (``z_i(0) = x_i(0) - alpha_{i-1}(0)``), and
* ``k_ci > rho_i + k_bi`` for ``i >= 2``, with ``rho_i = sup|w_i|`` measured
  by simulation.

Among feasible candidates the search maximizes ``N(sigma) = sum(sigma)``.
"""
import itertools
import math
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Optional, Sequence

import numpy as np

from .errors import BarrierViolation, ConfigError, EmptyFeasibleSet, SimulationDiverged
from .sim import PositivityLost, SimConfig, check_constraints, init_filters, simulate


def candidate_names(n):
    return tuple([f"K{i}" for i in range(1, n)] + [f"k_b{i}" for i in range(2, n + 1)])


def gains_for(gains, sigma):
    """``gains`` with ``K_1..K_{n-1}`` and ``k_b2..k_bn`` replaced by ``sigma``."""
    n = gains.n
    sigma = np.asarray(sigma, dtype=float)
    if sigma.size != 2 * (n - 1):
        raise ConfigError(f"candidate needs {2 * (n - 1)} entries, got {sigma.size}")
    K = gains.K.copy()
    kb = gains.kb.copy()
    K[: n - 1] = sigma[: n - 1]
    kb[1:] = sigma[n - 1:]
    return replace(gains, K=K, kb=kb)


def default_samples(cfg, fraction=0.5):
    """Corners and center of the box ``|z_i(0)| <= fraction * k_bi``, mapped to plant states.

    Samples whose reconstructed state leaves the constraint box are dropped.
    """
    n = cfg.plant.n
    kb = cfg.gains.kb
    corners = [np.zeros(n)] + [np.array(signs) * fraction * kb for signs in itertools.product((-1.0, 1.0), repeat=n)]
    samples = []
    for z0 in corners:
        x, _, _ = init_filters(cfg.gains, cfg.bases, cfg.reference, cfg.delta_hat0, cfg.theta_hat0, z0=z0,
                               strict=False)
        if np.all(np.isfinite(x)) and np.all(np.abs(x) < cfg.plant.constraint_bounds):
            samples.append(x)
    if not samples:
        raise ConfigError(f"no initial-state sample at fraction {fraction} lies inside the constraint box")
    return np.array(samples)


@dataclass
class FeasibilityProblem:
    """Search space and sampling for the gain search.

    ``base`` fixes the plant, reference, delay, step and every gain outside
    ``sigma``.  ``K_grid`` lists candidate values for each of ``K_1..K_{n-1}``
    and ``kb_grid`` for each of ``k_b2..k_bn``.  ``samples`` are initial plant
    states; by default they come from :func:`default_samples`.
    """

    base: SimConfig
    K_grid: Sequence[Sequence[float]]
    kb_grid: Sequence[Sequence[float]]
    samples: Optional[np.ndarray] = None
    horizon: Optional[float] = None
    sample_fraction: float = 0.5

    def __post_init__(self):
        n = self.base.plant.n
        problems = []
        self.K_grid = [sorted(float(v) for v in axis) for axis in self.K_grid]
        self.kb_grid = [sorted(float(v) for v in axis) for axis in self.kb_grid]
        if len(self.K_grid) != n - 1 or len(self.kb_grid) != n - 1:
            problems.append(f"need {n - 1} K axes and {n - 1} k_b axes")
        for name, axis in zip(candidate_names(n), self.K_grid + self.kb_grid):
            if not axis:
                problems.append(f"grid for {name} is empty")
            elif min(axis) <= 0:
                problems.append(f"grid for {name} must be strictly positive")
        if self.horizon is None:
            self.horizon = self.base.T
        if not self.horizon > 0:
            problems.append("horizon must be positive")
        if not 0 < self.sample_fraction < 1:
            problems.append("sample_fraction must lie in (0, 1)")
        if problems:
            raise ConfigError("; ".join(problems), problems)
        if self.samples is None:
            self.samples = default_samples(self.base, self.sample_fraction)
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.samples.shape[0] < 1 or self.samples.shape[1] != n:
            raise ConfigError(f"need at least one initial-state sample of length {n}")

    @property
    def n(self):
        return self.base.plant.n

    @property
    def names(self):
        return candidate_names(self.n)

    def candidates(self):
        """All grid points in lexicographic order."""
        return [tuple(c) for c in itertools.product(*self.K_grid, *self.kb_grid)]


@dataclass
class RhoEstimate:
    """Sampled ``rho_2..rho_n`` plus the largest initial ``|z_i(0)|`` per level."""

    rho: np.ndarray
    z0_max: np.ndarray
    feasible: bool
    reason: str = ""


def estimate_rho(sigma, problem):
    """Simulate every sample under ``sigma``; return per-index ``sup|w_i|``, ``i >= 2``.

    Candidates whose barriers already fail at ``t = 0`` are rejected without
    simulating; runs that abort mark the candidate infeasible.
    """
    base = problem.base
    n = problem.n
    gains = gains_for(base.gains, sigma)
    z0_max = np.zeros(n)
    for x0 in problem.samples:
        _, z, _ = init_filters(gains, base.bases, base.reference, base.delta_hat0, base.theta_hat0, x0=x0,
                               strict=False)
        z0_max = np.maximum(z0_max, np.where(np.isnan(z), np.inf, np.abs(z)))
    rho = np.full(n - 1, np.nan)
    bad = np.flatnonzero(z0_max >= gains.kb)
    if bad.size:
        i = int(bad[0]) + 1
        return RhoEstimate(rho, z0_max, False, f"|z{i}(0)| >= k_b{i} for some sample (checked before simulating)")
    rho[:] = 0.0
    for j, x0 in enumerate(problem.samples):
        cfg = replace(base, gains=gains, x0=x0, T=problem.horizon, record_stride=1)
        try:
            traj = simulate(cfg)
        except (BarrierViolation, SimulationDiverged) as exc:
            if exc.trajectory is not None and len(exc.trajectory):
                rho = np.maximum(rho, check_constraints(exc.trajectory).rho[1:])
            return RhoEstimate(rho, z0_max, False, f"sample {j}: {exc}")
        except PositivityLost as exc:
            return RhoEstimate(rho, z0_max, False, f"sample {j}: {exc}")
        rho = np.maximum(rho, check_constraints(traj).rho[1:])
    return RhoEstimate(rho, z0_max, True)


@dataclass
class CandidateResult:
    """Outcome of one candidate; ``margins`` maps constraint labels to slack (positive is satisfied)."""

    sigma: tuple
    objective: float
    rho: np.ndarray
    margins: dict
    feasible: bool
    reason: str = ""

    def worst(self):
        """``(label, margin)`` of the tightest constraint."""
        if not self.margins:
            return ("(none)", math.inf)
        label = min(self.margins, key=self.margins.get)
        return label, self.margins[label]


def evaluate_candidate(sigma, problem):
    sigma = tuple(float(s) for s in sigma)
    n = problem.n
    kc = problem.base.plant.constraint_bounds
    kb = gains_for(problem.base.gains, sigma).kb
    est = estimate_rho(sigma, problem)
    margins = {f"k_b{i + 1} - |z{i + 1}(0)|": float(kb[i] - est.z0_max[i]) for i in range(n)}
    if not np.any(np.isnan(est.rho)):
        for i in range(1, n):
            margins[f"k_c{i + 1} - rho{i + 1} - k_b{i + 1}"] = float(kc[i] - est.rho[i - 1] - kb[i])
    feasible = est.feasible and all(m > 0 for m in margins.values())
    reason = est.reason
    if est.feasible and not feasible:
        label, value = min(margins.items(), key=lambda kv: kv[1])
        reason = f"{label} = {value:.6g}"
    return CandidateResult(sigma, float(sum(sigma)), est.rho, margins, feasible, reason)


@dataclass
class PrerequisiteReport:
    """Prerequisite (a) ``k_bi <= k_ci - rho_i`` (``rho_1 = A0``) and (b) ``|z_i(0)| < k_bi``.

    Entries of ``a_ok`` are ``None`` when ``rho_i`` was not supplied.
    """

    A0: float
    kc: np.ndarray
    kb: np.ndarray
    rho: np.ndarray
    z0: np.ndarray
    a_margin: np.ndarray = field(init=False)
    a_ok: list = field(init=False)
    b_ok: list = field(init=False)

    def __post_init__(self):
        bound = np.concatenate([[self.A0], self.rho])
        self.a_margin = self.kc - bound - self.kb
        self.a_ok = [None if np.isnan(m) else bool(m >= 0) for m in self.a_margin]
        self.b_ok = [bool(np.abs(z) < k) if np.isfinite(z) else False for z, k in zip(self.z0, self.kb)]

    @property
    def kb1_margin(self):
        return float(self.a_margin[0])

    @property
    def ok(self):
        return all(a is True for a in self.a_ok) and all(self.b_ok)

    def lines(self):
        out = [f"A0 = sup|y_d| = {self.A0:.9g}"]
        for i, (m, a) in enumerate(zip(self.a_margin, self.a_ok)):
            bound = "A0" if i == 0 else f"rho{i + 1}"
            value = self.A0 if i == 0 else self.rho[i - 1]
            if a is None:
                out.append(f"(a) index {i + 1}: rho{i + 1} unknown, not checked")
                continue
            status = "holds" if a else ("VIOLATED (marginal)" if m > -0.01 * self.kb[i] else "VIOLATED")
            out.append(f"(a) index {i + 1}: k_b{i + 1} = {self.kb[i]:.6g} vs k_c{i + 1} - {bound} = "
                       f"{self.kc[i] - value:.6g}, margin {m:.6g}: {status}")
        for i, (z, b) in enumerate(zip(self.z0, self.b_ok)):
            out.append(f"(b) index {i + 1}: |z{i + 1}(0)| = {abs(z):.6g} < k_b{i + 1} = {self.kb[i]:.6g}: "
                       f"{'holds' if b else 'VIOLATED'}")
        return out

    def to_dict(self):
        return {"A0": self.A0, "kb1_margin": self.kb1_margin, "a_margin": self.a_margin.tolist(),
                "a_ok": self.a_ok, "z0": self.z0.tolist(), "b_ok": self.b_ok, "ok": self.ok}


def verify_prerequisites(cfg, rho=None):
    """Check the a-priori prerequisites for ``cfg`` without simulating.

    ``rho`` optionally supplies ``rho_2..rho_n`` (e.g. from :func:`estimate_rho`).
    """
    n = cfg.plant.n
    rho = np.full(n - 1, np.nan) if rho is None else np.asarray(rho, dtype=float).reshape(n - 1)
    _, z0, _ = init_filters(cfg.gains, cfg.bases, cfg.reference, cfg.delta_hat0, cfg.theta_hat0, x0=cfg.x0,
                            strict=False)
    return PrerequisiteReport(A0=float(cfg.reference.A0), kc=cfg.plant.constraint_bounds.copy(),
                              kb=cfg.gains.kb.copy(), rho=rho, z0=z0)


@dataclass
class FeasibilityResult:
    """Selected candidate with its margins and the full evaluation log."""

    names: tuple
    best: tuple
    objective: float
    margins: dict
    rho: np.ndarray
    prerequisites: PrerequisiteReport
    log: list
    feasible: bool = True

    @property
    def kb1_margin(self):
        return self.prerequisites.kb1_margin

    def table(self):
        return candidate_table(self.names, self.log)

    def summary(self):
        lines = ["selected " + ", ".join(f"{k}={v:g}" for k, v in zip(self.names, self.best))
                 + f"  N={self.objective:g}"]
        lines += [f"  {label}: {value:.6g}" for label, value in self.margins.items()]
        lines += self.prerequisites.lines()
        return "\n".join(lines)

    def to_dict(self):
        return {
            "names": list(self.names), "best": list(self.best), "objective": self.objective,
            "feasible": self.feasible, "margins": self.margins, "rho": self.rho.tolist(),
            "kb1_margin": self.kb1_margin, "prerequisites": self.prerequisites.to_dict(),
            "candidates": [{"sigma": list(r.sigma), "N": r.objective, "feasible": r.feasible,
                            "margins": r.margins, "reason": r.reason} for r in self.log],
        }


def candidate_table(names, results):
    """CSV text with one row per evaluated candidate and its tightest constraint."""
    rows = [",".join(list(names) + ["N", "feasible", "tightest", "margin"])]
    for r in results:
        label, value = r.worst()
        rows.append(",".join([f"{s:g}" for s in r.sigma] + [f"{r.objective:g}", str(r.feasible), label, f"{value:.6g}"]))
    return "\n".join(rows)


def _tightest(results):
    """Describe the least-violated constraint over all candidates."""
    scored = [(r.worst()[1], r) for r in results]
    value, r = max(scored, key=lambda pair: (pair[0], tuple(-s for s in pair[1].sigma)))
    label, _ = r.worst()
    where = ", ".join(f"{s:g}" for s in r.sigma)
    if value > 0:
        return f"candidate ({where}): {r.reason}"
    return f"{label} = {value:.6g} at candidate ({where})"


def select_best(results):
    """Feasible result with the largest ``N``; ties go to the lexicographically smallest ``sigma``."""
    passing = [r for r in results if r.feasible]
    if not passing:
        return None
    return min(passing, key=lambda r: (-r.objective, r.sigma))


def feasibility_search(problem, map_fn=map):
    """Exhaustive grid search for the feasible candidate maximizing ``N``.

    Ties in ``N`` go to the lexicographically smallest candidate.  ``map_fn``
    may be any ``map``-compatible executor; evaluations are independent.

    Raises:
        ConfigError: on an empty grid.
        EmptyFeasibleSet: naming the tightest violated constraint.
    """
    candidates = problem.candidates()
    if not candidates:
        raise ConfigError("candidate grid is empty")
    results = list(map_fn(partial(evaluate_candidate, problem=problem), candidates))
    passing = [r for r in results if r.feasible]
    if not passing:
        tightest = _tightest(results)
        raise EmptyFeasibleSet(f"no feasible candidate among {len(results)}; tightest: {tightest}", tightest,
                               results)
    best = select_best(passing)
    cfg = replace(problem.base, gains=gains_for(problem.base.gains, best.sigma))
    prereq = verify_prerequisites(cfg, rho=best.rho)
    return FeasibilityResult(problem.names, best.sigma, best.objective, best.margins, best.rho, prereq, results)
