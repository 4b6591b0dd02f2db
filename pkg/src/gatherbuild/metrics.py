"""Utility, equality, productivity, and social-welfare computations.

Everything here is pure and stateless. Monetary utility is isoelastic
(CRRA) with a linear labor penalty; social welfare is either the product
of equality (1 - normalized Gini) and productivity (total coin), or a
linear-weighted sum of agent utilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Default curvature of the isoelastic money utility.
DEFAULT_ETA = 0.23

#: Floor used in place of a zero endowment when forming 1/x welfare weights.
INVERSE_INCOME_EPS = 1e-6


@dataclass(frozen=True)
class UtilityParams:
    """Curvature of the isoelastic money utility (must be > 0 and != 1)."""

    eta: float = DEFAULT_ETA

    def __post_init__(self):
        if self.eta <= 0 or self.eta == 1.0:
            raise ValueError(f"eta must be positive and != 1, got {self.eta}")


def crra(z, eta: float = DEFAULT_ETA):
    """Isoelastic money utility (z^(1-eta) - 1) / (1-eta).

    Concave and increasing for eta in (0, 1); crra(1) == 0 for any eta.
    Accepts scalars or arrays; z must be nonnegative.
    """
    z = np.asarray(z, dtype=float)
    out = (np.power(z, 1.0 - eta) - 1.0) / (1.0 - eta)
    return float(out) if out.ndim == 0 else out


def utility(coin: float, labor: float, eta: float = DEFAULT_ETA) -> float:
    """Agent utility: diminishing returns over coin, linear labor cost."""
    return crra(coin, eta) - labor


def gini(endowments) -> float:
    """Gini index: sum_ij |x_i - x_j| / (2 N sum_i x_i), in [0, (N-1)/N].

    The all-zero population is defined to have index 0 (the equal-endowment
    limit), which keeps episode-start metrics finite.
    """
    x = np.asarray(endowments, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("gini needs at least two endowments")
    if np.any(x < 0):
        raise ValueError("endowments must be nonnegative")
    total = x.sum()
    if total == 0.0:
        return 0.0
    diffs = np.abs(x[:, None] - x[None, :]).sum()
    return float(diffs / (2.0 * n * total))


def equality(endowments) -> float:
    """Complement of the normalized Gini index, in [0, 1]."""
    x = np.asarray(endowments, dtype=float)
    n = x.size
    return 1.0 - gini(x) * n / (n - 1)


def productivity(endowments) -> float:
    """Total coin across agents."""
    return float(np.asarray(endowments, dtype=float).sum())


def swf_eq_times_prod(endowments) -> float:
    """Primary planner objective: equality times productivity."""
    return equality(endowments) * productivity(endowments)


def welfare_weights(endowments, mode: str) -> np.ndarray:
    """Per-agent weights for the linear-weighted welfare family.

    Modes:
      * ``utilitarian``: all ones.
      * ``rawlsian``: indicator of the poorest agent(s); ties split the
        unit weight equally.
      * ``inverse_income``: 1/x normalized to sum to one; zero endowments
        are floored at INVERSE_INCOME_EPS before inverting.
    """
    x = np.asarray(endowments, dtype=float)
    if mode == "utilitarian":
        return np.ones_like(x)
    if mode == "rawlsian":
        at_min = x == x.min()
        return at_min / at_min.sum()
    if mode == "inverse_income":
        raw = 1.0 / np.maximum(x, INVERSE_INCOME_EPS)
        return raw / raw.sum()
    raise ValueError(f"unknown welfare weight mode: {mode!r}")


def swf_weighted(endowments, labors, mode: str, eta: float = DEFAULT_ETA) -> float:
    """Weighted sum of agent utilities under the given weight mode."""
    x = np.asarray(endowments, dtype=float)
    l = np.asarray(labors, dtype=float)
    w = welfare_weights(x, mode)
    utils = crra(x, eta) - l
    return float(np.dot(w, utils))
