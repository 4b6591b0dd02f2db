"""Bracketed marginal taxation, lump-sum redistribution, and the Saez controller.

A tax schedule is a set of ascending income cutoffs (the last one infinite)
with one marginal rate per bracket, US-federal style. Taxes are collected at
the end of each tax period on the income earned within it and redistributed
evenly. The Saez machinery estimates the elasticity of taxable income from a
rolling buffer of (income, marginal rate) observations and converts the
distributional statistics of recent incomes into near-optimal bracket rates.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

#: 2018 US-federal single-filer cutoffs, scaled so USD 1000 = 1 coin.
US_FEDERAL_CUTOFFS = (0.0, 9.7, 39.475, 84.2, 160.725, 204.1, 510.3, float("inf"))

#: 2018 US-federal single-filer marginal rates.
US_FEDERAL_RATES = (0.1, 0.12, 0.22, 0.24, 0.32, 0.35, 0.37)

#: Elasticity assumed before the observation buffer has warmed up.
DEFAULT_ELASTICITY = 0.5

#: Minimum valid (income, rate) pairs before an OLS fit is attempted.
MIN_FIT_SAMPLES = 100

#: Observation buffer capacity (most recent incomes and rates kept).
ELASTICITY_BUFFER_CAPACITY = 30_000

#: Marginal rates are clipped here before taking log(1 - rate) in the fit.
RATE_CLIP_FOR_FIT = 0.99


@dataclass(frozen=True)
class TaxSchedule:
    """Bracket cutoffs (len B+1, first 0, last inf) and marginal rates (len B)."""

    cutoffs: tuple
    rates: tuple

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cutoffs)
        rates = tuple(float(r) for r in self.rates)
        object.__setattr__(self, "cutoffs", cuts)
        object.__setattr__(self, "rates", rates)
        if len(cuts) != len(rates) + 1:
            raise ValueError("need exactly one more cutoff than rates")
        if cuts[0] != 0.0 or not np.isinf(cuts[-1]):
            raise ValueError("cutoffs must start at 0 and end at infinity")
        if any(a >= b for a, b in zip(cuts, cuts[1:])):
            raise ValueError("cutoffs must be strictly ascending")
        if any(r < 0.0 or r > 1.0 for r in rates):
            raise ValueError("rates must lie in [0, 1]")

    @property
    def n_brackets(self) -> int:
        return len(self.rates)

    def with_rates(self, rates) -> "TaxSchedule":
        return TaxSchedule(self.cutoffs, tuple(float(r) for r in rates))

    def to_dict(self) -> dict:
        cuts = ["inf" if np.isinf(c) else c for c in self.cutoffs]
        return {"cutoffs": cuts, "rates": list(self.rates)}

    @classmethod
    def from_dict(cls, d: dict) -> "TaxSchedule":
        cuts = [float("inf") if c in ("inf", ".inf") else float(c) for c in d["cutoffs"]]
        return cls(tuple(cuts), tuple(d["rates"]))


def free_market_schedule(cutoffs=US_FEDERAL_CUTOFFS) -> TaxSchedule:
    return TaxSchedule(cutoffs, (0.0,) * (len(cutoffs) - 1))


def fixed_schedule(name: str, camelback_rates=None, cutoffs=US_FEDERAL_CUTOFFS) -> TaxSchedule:
    """Named baseline schedules: ``free``, ``us_federal``, or ``camelback``.

    Camelback rates were only ever published graphically, so they must be
    supplied explicitly (usually via the experiment config).
    """
    if name == "free":
        return free_market_schedule(cutoffs)
    if name == "us_federal":
        return TaxSchedule(cutoffs, US_FEDERAL_RATES)
    if name == "camelback":
        if camelback_rates is None:
            raise ValueError(
                "camelback rates are not built in; supply them via configuration"
            )
        return TaxSchedule(cutoffs, tuple(camelback_rates))
    raise ValueError(f"unknown schedule name: {name!r}")


def tax_due(z: float, schedule: TaxSchedule) -> float:
    """Total tax on a period income z: each bracket's slice times its rate.

    Piecewise linear, continuous, and nondecreasing in z.
    """
    if z < 0:
        raise ValueError("tax_due expects nonnegative income (callers clamp)")
    total = 0.0
    cuts = schedule.cutoffs
    for b, rate in enumerate(schedule.rates):
        lo, hi = cuts[b], cuts[b + 1]
        if z <= lo:
            break
        total += rate * (min(z, hi) - lo)
    return total


def marginal_rate_at(z: float, schedule: TaxSchedule) -> float:
    """Rate of the bracket containing z; cutoffs belong to the higher bracket."""
    if z < 0:
        z = 0.0
    interior = np.asarray(schedule.cutoffs[1:-1])
    b = int(np.searchsorted(interior, z, side="right"))
    return schedule.rates[b]


@dataclass(frozen=True)
class PeriodSettlement:
    """Outcome of settling one tax period across all agents."""

    period: int
    incomes: np.ndarray        # raw period incomes, may be negative
    taxable: np.ndarray        # clamped at zero for taxation
    taxes: np.ndarray
    transfer: float            # equal per-agent share of collected taxes
    adjustments: np.ndarray    # transfer - tax, applied to each agent's coin
    marginal_rates: np.ndarray  # at each agent's taxable income
    rates: tuple               # schedule rates in force for the period


def settle_period(period: int, incomes, schedule: TaxSchedule) -> PeriodSettlement:
    """Collect taxes on the period's incomes and redistribute them evenly.

    Negative incomes (possible via net trading losses) are clamped to zero
    before taxation. Budget balance is exact: the sum of adjustments is zero.
    """
    z = np.asarray(incomes, dtype=float)
    taxable = np.maximum(z, 0.0)
    taxes = np.array([tax_due(v, schedule) for v in taxable])
    transfer = float(taxes.sum()) / z.size
    marginal = np.array([marginal_rate_at(v, schedule) for v in taxable])
    return PeriodSettlement(
        period=period,
        incomes=z,
        taxable=taxable,
        taxes=taxes,
        transfer=transfer,
        adjustments=transfer - taxes,
        marginal_rates=marginal,
        rates=schedule.rates,
    )


@dataclass
class PeriodLedger:
    """Per-episode record of settled periods."""

    settlements: list = field(default_factory=list)

    def record(self, settlement: PeriodSettlement):
        self.settlements.append(settlement)

    def __len__(self):
        return len(self.settlements)


class ElasticityBuffer:
    """Ring buffer of recent (income, marginal rate) observations.

    Only pairs with positive income and rate < 1 are retained; others carry
    no information for the log-log fit.
    """

    def __init__(self, capacity: int = ELASTICITY_BUFFER_CAPACITY):
        self._pairs = deque(maxlen=capacity)

    def add(self, income: float, rate: float):
        if income > 0.0 and rate < 1.0:
            self._pairs.append((float(income), float(rate)))

    def extend(self, incomes, rates):
        for z, t in zip(incomes, rates):
            self.add(z, t)

    def arrays(self):
        if not self._pairs:
            return np.empty(0), np.empty(0)
        z, t = zip(*self._pairs)
        return np.asarray(z), np.asarray(t)

    def __len__(self):
        return len(self._pairs)


@dataclass(frozen=True)
class ElasticityFit:
    """OLS fit of log z = e * log(1 - tau) + log z0."""

    elasticity: float
    log_z0: float | None       # None when the default was returned
    n_samples: int
    defaulted: bool


def fit_elasticity(
    incomes,
    rates,
    min_samples: int = MIN_FIT_SAMPLES,
    default: float = DEFAULT_ELASTICITY,
) -> ElasticityFit:
    """Estimate the constant elasticity of taxable income by OLS.

    Under z = z0 * (1 - tau)^e the slope of log z on log(1 - tau) is e.
    Returns the configured default when the sample is too small or the
    regressor is degenerate (all rates equal).
    """
    z = np.asarray(incomes, dtype=float)
    t = np.asarray(rates, dtype=float)
    keep = (z > 0.0) & (t < 1.0)
    z, t = z[keep], t[keep]
    if z.size < min_samples:
        return ElasticityFit(default, None, int(z.size), True)
    x = np.log1p(-np.minimum(t, RATE_CLIP_FOR_FIT))
    y = np.log(z)
    xc = x - x.mean()
    var = float(np.dot(xc, xc))
    if var < 1e-12:
        return ElasticityFit(default, None, int(z.size), True)
    slope = float(np.dot(xc, y)) / var
    intercept = float(y.mean() - slope * x.mean())
    return ElasticityFit(slope, intercept, int(z.size), False)


def saez_rate(g_above, alpha, elasticity):
    """Optimal marginal rate (1 - G) / (1 - G + alpha * e), clipped to [0, 1].

    G is the normalized reverse-cumulative welfare weight above the income
    level and alpha the hazard-style local income statistic z f(z)/(1-F(z)).
    Where both the numerator and alpha*e vanish the rate is defined as 0.
    """
    g_above = np.asarray(g_above, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    numer = np.maximum(1.0 - g_above, 0.0)
    denom = numer + alpha * elasticity
    with np.errstate(invalid="ignore", divide="ignore"):
        tau = np.where(denom > 0.0, numer / denom, 0.0)
    return np.clip(tau, 0.0, 1.0)


def saez_schedule(
    incomes,
    elasticity: float,
    cutoffs=US_FEDERAL_CUTOFFS,
    bin_width: float = 1.0,
    tail_fraction: float = 0.05,
) -> TaxSchedule:
    """Build a bracketed schedule from income samples via the Saez formula.

    The income distribution is histogrammed at fixed width; per bin we form
    f, 1-F, the local statistic alpha = z f/(1-F), and the reverse-cumulative
    inverse-income welfare weight G, then evaluate the optimal rate with the
    supplied (constant) elasticity. The top occupied bin is treated as an
    open Pareto tail: alpha there is the Hill exponent estimated from the
    top ``tail_fraction`` of samples. Bracket rates are the income-weighted
    average of bin rates inside each bracket.

    Raises ValueError when no positive income sample exists (callers keep
    their previous schedule in that case).
    """
    z = np.asarray(incomes, dtype=float)
    z = z[z > 0.0]
    if z.size == 0:
        raise ValueError("saez_schedule needs at least one positive income")
    n = z.size
    n_bins = max(1, int(np.ceil(z.max() / bin_width)))
    edges = np.arange(n_bins + 1, dtype=float) * bin_width
    counts, _ = np.histogram(z, bins=edges)
    income_mass, _ = np.histogram(z, bins=edges, weights=z)
    weight_mass, _ = np.histogram(z, bins=edges, weights=1.0 / z)
    centers = edges[:-1] + 0.5 * bin_width

    above_count = np.cumsum(counts[::-1])[::-1].astype(float)
    above_weight = np.cumsum(weight_mass[::-1])[::-1]
    total_weight = weight_mass.sum()

    with np.errstate(invalid="ignore", divide="ignore"):
        g_above = np.where(
            above_count > 0, (above_weight / total_weight) * (n / above_count), 0.0
        )
        alpha = np.where(above_count > 0, centers * (counts / n) / (above_count / n), 0.0)

    # Open tail: for a Pareto upper tail, z f/(1-F) tends to the exponent.
    last = int(np.max(np.nonzero(counts)[0]))
    k = max(1, int(np.floor(n * tail_fraction)))
    top = np.sort(z)[-k:]
    hill_denom = float(np.log(top / top[0]).sum())
    if hill_denom > 0.0:
        alpha[last] = k / hill_denom

    tau_bin = saez_rate(g_above, alpha, elasticity)

    cuts = np.asarray(cutoffs, dtype=float)
    rates = []
    for b in range(len(cuts) - 1):
        in_bracket = (centers >= cuts[b]) & (centers < cuts[b + 1])
        mass = income_mass[in_bracket]
        if mass.sum() > 0.0:
            rates.append(float(np.dot(tau_bin[in_bracket], mass) / mass.sum()))
        elif in_bracket.any():
            rates.append(float(tau_bin[in_bracket].mean()))
        else:
            # Bracket lies entirely above the observed incomes: extend the tail.
            rates.append(float(tau_bin[last]))
    return TaxSchedule(tuple(cutoffs), tuple(np.clip(rates, 0.0, 1.0)))
