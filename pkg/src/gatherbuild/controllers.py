"""Tax controllers: the rate-setting side of each treatment.

A controller produces a bracket-rate vector at the first tick of each tax
period. Formulaic controllers bypass the learned planner's 5% action grid
and set exact rates. The multi-period Saez controller keeps a rolling
buffer of observed (income, marginal rate) pairs across settlements;
parallel samplers feed it between iterations (single-writer aggregation).
"""

from __future__ import annotations

import numpy as np

from .env import N_RATE_LEVELS, RATE_STEP
from .tax import (
    DEFAULT_ELASTICITY,
    ElasticityBuffer,
    TaxSchedule,
    fit_elasticity,
    fixed_schedule,
    free_market_schedule,
    saez_schedule,
)

TREATMENTS = ("free", "us_federal", "saez", "camelback", "learned", "random")


class FixedScheduleController:
    """Free-market, US-federal, or config-supplied (e.g. camelback) rates."""

    def __init__(self, schedule: TaxSchedule):
        self.schedule = schedule

    def rates_at_period_start(self, rng=None) -> np.ndarray:
        return np.asarray(self.schedule.rates)

    def observe_settlement(self, settlement):
        pass

    def aggregate(self):
        pass


class RandomRateController:
    """Uniform draw from the planner's discrete rate grid, per bracket."""

    def __init__(self, n_brackets: int = 7):
        self.n_brackets = n_brackets

    def rates_at_period_start(self, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, N_RATE_LEVELS, self.n_brackets) * RATE_STEP

    def observe_settlement(self, settlement):
        pass

    def aggregate(self):
        pass


class SaezController:
    """Multi-period Saez rates from the elasticity fit and recent incomes.

    Starts at the free-market schedule; until the buffer warms up the fit
    falls back to the default elasticity, and with no positive income
    observed yet the previous schedule is retained.
    """

    def __init__(self, cutoffs, min_fit_samples: int = 100,
                 default_elasticity: float = DEFAULT_ELASTICITY,
                 elasticity_floor: float = 0.0):
        self.schedule = free_market_schedule(cutoffs)
        self.buffer = ElasticityBuffer()
        self.min_fit_samples = min_fit_samples
        self.default_elasticity = default_elasticity
        self.elasticity_floor = elasticity_floor
        self._pending: list = []
        self.last_fit = None

    def rates_at_period_start(self, rng=None) -> np.ndarray:
        incomes, rates = self.buffer.arrays()
        fit = fit_elasticity(
            incomes, rates, min_samples=self.min_fit_samples,
            default=self.default_elasticity,
        )
        self.last_fit = fit
        # A non-positive fitted elasticity (possible when the buffer's rate
        # variation is mechanical) breaks the rate formula's denominator;
        # floor it for schedule-building only, keeping the raw fit reported.
        effective = max(fit.elasticity, self.elasticity_floor)
        try:
            self.schedule = saez_schedule(
                incomes, effective, cutoffs=self.schedule.cutoffs
            )
        except ValueError:
            pass    # no positive incomes yet: keep the previous schedule
        return np.asarray(self.schedule.rates)

    def observe_settlement(self, settlement):
        self._pending.append((settlement.taxable.copy(), settlement.marginal_rates.copy()))

    def aggregate(self):
        """Fold pending settlement observations into the shared buffer."""
        for taxable, marginal in self._pending:
            self.buffer.extend(taxable, marginal)
        self._pending.clear()


def make_controller(treatment: str, cutoffs, camelback_rates=None, saez_rates=None):
    """Controller for a named treatment; ``learned`` has none (the planner
    policy acts through the environment's action interface)."""
    if treatment == "free":
        return FixedScheduleController(free_market_schedule(cutoffs))
    if treatment == "us_federal":
        return FixedScheduleController(fixed_schedule("us_federal", cutoffs=cutoffs))
    if treatment == "camelback":
        return FixedScheduleController(
            fixed_schedule("camelback", camelback_rates=camelback_rates, cutoffs=cutoffs)
        )
    if treatment == "saez":
        if saez_rates is not None:
            # Zero-shot fixed Saez rates (used for human sessions).
            return FixedScheduleController(TaxSchedule(cutoffs, tuple(saez_rates)))
        return SaezController(cutoffs)
    if treatment == "random":
        return RandomRateController(len(cutoffs) - 1)
    if treatment == "learned":
        return None
    raise ValueError(f"unknown treatment {treatment!r}; expected one of {TREATMENTS}")
