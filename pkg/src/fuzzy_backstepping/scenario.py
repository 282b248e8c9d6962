"""Flat TOML scenario and grid files.

Scenario keys (all top level, no tables)::

    plant            "example" or "expr"
    f                list of n expressions in x1..xn, u        (plant = "expr")
    d                list of n expressions in t                 (optional)
    disturbance_bounds, kc                                      (kc optional for "example")
    reference        expression in t
    tau, h, T, x0, delta_hat0, theta_hat0, u0, chi0
    K, kb, sigma, gamma, beta, upsilon, filter_tau, kappa, lam, a
    fls_counts       int or one int per level
    fls_rate_range   one bound per level for the filter-rate input
    out_dir, stride, name

Grid keys: one list per free design constant (``K1..K{n-1}``,
``k_b2..k_bn``) plus optional ``horizon``, ``sample_fraction`` and
``samples``.
"""
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import tomli

from .controller import ControllerGains, ReferenceSignal
from .errors import ConfigError
from .feasibility import FeasibilityProblem, candidate_names
from .plant import example_plant, plant_from_expressions
from .sim import SimConfig, default_bases, initial_state

REQUIRED = ("reference", "tau", "h", "T", "x0", "delta_hat0", "theta_hat0", "K", "kb", "sigma", "gamma", "beta",
            "upsilon", "filter_tau", "kappa")
OPTIONAL = ("plant", "f", "d", "disturbance_bounds", "kc", "u0", "chi0", "lam", "a", "fls_counts", "fls_rate_range",
            "out_dir", "stride", "name")
GRID_OPTIONAL = ("horizon", "sample_fraction", "samples")


@dataclass
class Scenario:
    cfg: SimConfig
    name: str
    out_dir: Path
    stride: int
    lam_given: bool
    raw: dict


def _read(path):
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _number(raw, key, problems, positive=False):
    value = raw.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        problems.append(f"{key}: expected a finite number, got {value!r}")
        return None
    if positive and value <= 0:
        problems.append(f"{key}: must be positive, got {value!r}")
        return None
    return float(value)


def _vector(raw, key, problems, length=None):
    value = raw.get(key)
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    if (not isinstance(value, list) or not value
            or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)):
        problems.append(f"{key}: expected a list of numbers, got {value!r}")
        return None
    if length is not None and len(value) != length:
        problems.append(f"{key}: expected {length} entries, got {len(value)}")
        return None
    return np.array(value, dtype=float)


def _strings(raw, key, problems):
    value = raw.get(key)
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        problems.append(f"{key}: expected a list of strings")
        return None
    return value


def _build_plant(raw, problems):
    kind = raw.get("plant", "example")
    if kind == "example":
        for key in ("f", "d", "disturbance_bounds"):
            if key in raw:
                problems.append(f"{key}: only valid with plant = \"expr\"")
        plant = example_plant()
        if "kc" in raw:
            kc = _vector(raw, "kc", problems, 2)
            if kc is not None:
                try:
                    plant = replace(plant, constraint_bounds=kc)
                except ConfigError as exc:
                    problems.extend(exc.problems)
        return plant
    if kind != "expr":
        problems.append(f"plant: expected \"example\" or \"expr\", got {kind!r}")
        return None
    f = _strings(raw, "f", problems)
    kc = _vector(raw, "kc", problems, len(f) if f else None)
    d = _strings(raw, "d", problems) if "d" in raw else None
    dm = _vector(raw, "disturbance_bounds", problems) if "disturbance_bounds" in raw else None
    if f is None or kc is None:
        return None
    try:
        plant = plant_from_expressions(f, kc, d, dm)
    except ConfigError as exc:
        problems.extend(exc.problems)
        return None
    if d is not None and "T" in raw and isinstance(raw["T"], (int, float)):
        worst = plant.check_disturbance_bounds(float(raw["T"]))
        over = np.flatnonzero(worst > plant.disturbance_bounds * (1 + 1e-12))
        for i in over:
            problems.append(f"d{i + 1}: sampled |d| = {worst[i]:.6g} exceeds disturbance_bounds[{i}]")
    return plant


def load_scenario(path):
    """Parse and validate a scenario file.

    Raises:
        ConfigError: with ``.problems`` listing every issue found.
    """
    raw = _read(path)
    problems = [f"unknown key {k!r}" for k in raw if k not in REQUIRED + OPTIONAL]
    problems += [f"missing key {k!r}" for k in REQUIRED if k not in raw]
    if problems:
        raise ConfigError(f"{path}: invalid scenario", problems)

    plant = _build_plant(raw, problems)
    n = plant.n if plant is not None else len(raw["kb"]) if isinstance(raw.get("kb"), list) else None
    tau = _number(raw, "tau", problems, positive=True)
    h = _number(raw, "h", problems, positive=True)
    T = _number(raw, "T", problems, positive=True)
    x0 = _vector(raw, "x0", problems, n)
    dh0 = _vector(raw, "delta_hat0", problems, n)
    th0 = _vector(raw, "theta_hat0", problems, n)
    u0 = _number(raw, "u0", problems) if "u0" in raw else 0.0
    chi0 = _number(raw, "chi0", problems) if "chi0" in raw else None

    vectors = {k: _vector(raw, k, problems, (n + 1) if k == "K" else n)
               for k in ("K", "kb", "sigma", "gamma", "beta", "upsilon", "filter_tau")}
    kappa = _number(raw, "kappa", problems)
    lam = _number(raw, "lam", problems, positive=True) if "lam" in raw else None
    a = _vector(raw, "a", problems, n) if "a" in raw else None

    reference = None
    if not isinstance(raw["reference"], str):
        problems.append("reference: expected an expression string in t")
    elif T is not None:
        try:
            reference = ReferenceSignal.from_expression(raw["reference"], T)
        except ConfigError as exc:
            problems.extend(exc.problems)

    stride = raw.get("stride", 1)
    if isinstance(stride, bool) or not isinstance(stride, int) or stride < 1:
        problems.append(f"stride: expected a positive integer, got {stride!r}")
    counts = raw.get("fls_counts", 5)
    if isinstance(counts, int) and not isinstance(counts, bool):
        counts = [counts] * (n or 1)
    if (not isinstance(counts, list) or len(counts) != (n or len(counts))
            or any(isinstance(c, bool) or not isinstance(c, int) or c < 1 for c in counts)):
        problems.append(f"fls_counts: expected a positive integer or {n} of them, got {raw.get('fls_counts')!r}")
        counts = None
    rate_range = _vector(raw, "fls_rate_range", problems, n) if "fls_rate_range" in raw else None
    if rate_range is not None and not np.all(rate_range > 0):
        problems.append("fls_rate_range: entries must be positive")
    for key in ("out_dir", "name"):
        if key in raw and not isinstance(raw[key], str):
            problems.append(f"{key}: expected a string")
    if problems:
        raise ConfigError(f"{path}: invalid scenario", problems)

    try:
        gains = ControllerGains(**vectors, kappa=kappa, lam=lam, a=a)
        bases = default_bases(plant, reference, counts, rate_range)
        cfg = SimConfig(plant, gains, reference, x0=x0, delta_hat0=dh0, theta_hat0=th0, tau=tau, h=h, T=T, u0=u0,
                        chi0=chi0, bases=bases, record_stride=stride)
        initial_state(cfg)
    except ConfigError as exc:
        raise ConfigError(f"{path}: invalid scenario", exc.problems) from exc
    name = raw.get("name", Path(path).stem)
    return Scenario(cfg=cfg, name=name, out_dir=Path(raw.get("out_dir", ".")), stride=stride,
                    lam_given=lam is not None, raw=raw)


def load_grid(path, scenario):
    """Parse a grid file into a :class:`FeasibilityProblem` around ``scenario``."""
    raw = _read(path)
    n = scenario.cfg.plant.n
    names = candidate_names(n)
    problems = [f"unknown key {k!r}" for k in raw if k not in names + GRID_OPTIONAL]
    problems += [f"missing grid axis {k!r}" for k in names if k not in raw]
    if problems:
        raise ConfigError(f"{path}: invalid grid", problems)
    axes = {}
    for k in names:
        value = raw[k]
        if isinstance(value, list) and not value:
            problems.append(f"{k}: grid axis is empty")
            continue
        axes[k] = _vector(raw, k, problems)
    horizon = _number(raw, "horizon", problems, positive=True) if "horizon" in raw else None
    fraction = _number(raw, "sample_fraction", problems, positive=True) if "sample_fraction" in raw else 0.5
    samples = None
    if "samples" in raw:
        value = raw["samples"]
        if (not isinstance(value, list) or not value
                or any(not isinstance(s, list) or len(s) != n for s in value)):
            problems.append(f"samples: expected a list of length-{n} lists")
        else:
            samples = np.array(value, dtype=float)
    if problems:
        raise ConfigError(f"{path}: invalid grid", problems)
    K_grid = [axes[k] for k in names[: n - 1]]
    kb_grid = [axes[k] for k in names[n - 1:]]
    return FeasibilityProblem(scenario.cfg, K_grid, kb_grid, samples=samples, horizon=horizon,
                              sample_fraction=fraction)
