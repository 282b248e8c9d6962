"""Normalized Gaussian fuzzy basis (singleton fuzzifier, product inference,
center-average defuzzification).

Only the regressor ``xi(Z)`` and its squared norm are needed by the
controller: the adaptation laws estimate a single scalar per level, so no
rule weights are stored here.
"""
import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from ._jit import jit
from .errors import ConfigError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FuzzyBasis:
    """Rule centers ``l_j`` and widths ``eta_j``, both shaped ``(N, dim)``."""

    centers: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        widths = np.atleast_2d(np.asarray(self.widths, dtype=float))
        if centers.shape != widths.shape or centers.size == 0:
            raise ConfigError(f"centers {centers.shape} and widths {widths.shape} must match and be non-empty")
        if not np.all(widths > 0):
            raise ConfigError("all Gaussian widths must be strictly positive")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "widths", widths)

    @property
    def dim(self):
        return self.centers.shape[1]

    @property
    def N(self):
        return self.centers.shape[0]

    @property
    def inv_scale(self):
        """``1 / (eta_j^T eta_j)`` per rule."""
        return 1.0 / np.sum(self.widths ** 2, axis=1)


def basis(b, Z):
    """Regressor ``xi(Z)``: Gaussian firing strengths normalized to sum to one.

    Exponents are shifted by their minimum before exponentiation; the
    normalized result is unchanged, and the nearest rule always fires with
    strength one, so the sum can never underflow to zero.
    """
    Z = np.asarray(Z, dtype=float).reshape(-1)
    if Z.shape[0] != b.dim:
        raise ValueError(f"input has dimension {Z.shape[0]}, basis expects {b.dim}")
    d = np.sum((Z - b.centers) ** 2, axis=1) * b.inv_scale
    dmin = d.min()
    if math.exp(-dmin) == 0.0:
        log.debug("raw firing strengths underflow at Z=%s; nearest rule dominates", Z)
    zeta = np.exp(-(d - dmin))
    return zeta / zeta.sum()


def regressor_norm(xi):
    """``xi^T xi``; lies in ``[1/N, 1]`` for a normalized regressor."""
    xi = np.asarray(xi, dtype=float)
    return float(xi @ xi)


def make_grid_basis(ranges, counts):
    """Rules on the Cartesian grid of evenly spaced centers.

    Each dimension gets the grid spacing as its width, or ``hi - lo`` when it
    holds a single center (placed at the midpoint).
    """
    ranges = [tuple(map(float, r)) for r in ranges]
    counts = [int(c) for c in counts]
    if not ranges or len(ranges) != len(counts):
        raise ConfigError("need one (lo, hi) range per rule count")
    axes, spacing = [], []
    for (lo, hi), c in zip(ranges, counts):
        if not lo < hi:
            raise ConfigError(f"empty range [{lo}, {hi}]")
        if c < 1:
            raise ConfigError(f"rule count must be >= 1, got {c}")
        if c == 1:
            axes.append(np.array([0.5 * (lo + hi)]))
            spacing.append(hi - lo)
        else:
            axes.append(np.linspace(lo, hi, c))
            spacing.append((hi - lo) / (c - 1))
    centers = np.array(list(itertools.product(*axes)), dtype=float)
    widths = np.tile(np.array(spacing), (centers.shape[0], 1))
    return FuzzyBasis(centers, widths)


def pack_bases(bases):
    """Stack per-level bases into flat arrays for the compiled kernel.

    Returns ``(centers, inv_scale, offsets)`` where rows
    ``offsets[i]:offsets[i+1]`` belong to level ``i`` and unused trailing
    columns are zero.
    """
    width = max(b.dim for b in bases)
    rows = sum(b.N for b in bases)
    centers = np.zeros((rows, width))
    inv_scale = np.empty(rows)
    offsets = np.zeros(len(bases) + 1, dtype=np.int64)
    r = 0
    for i, b in enumerate(bases):
        centers[r:r + b.N, :b.dim] = b.centers
        inv_scale[r:r + b.N] = b.inv_scale
        r += b.N
        offsets[i + 1] = r
    return centers, inv_scale, offsets


@jit
def xi_sq_packed(centers, inv_scale, lo, hi, Z, dim):
    """``xi^T xi`` for rules ``lo:hi`` of a packed basis at input ``Z[:dim]``."""
    dmin = np.inf
    for j in range(lo, hi):
        acc = 0.0
        for k in range(dim):
            diff = Z[k] - centers[j, k]
            acc += diff * diff
        acc *= inv_scale[j]
        if acc < dmin:
            dmin = acc
    s1 = 0.0
    s2 = 0.0
    for j in range(lo, hi):
        acc = 0.0
        for k in range(dim):
            diff = Z[k] - centers[j, k]
            acc += diff * diff
        zeta = math.exp(-(acc * inv_scale[j] - dmin))
        s1 += zeta
        s2 += zeta * zeta
    return s2 / (s1 * s1)
