"""Post-hoc analyses over completed episodes: per-skill breakdowns, income
smoothing (tax-gaming) counterfactuals, paired significance tests, and CSV
export."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as scipy_stats

from .tax import TaxSchedule, tax_due


@dataclass(frozen=True)
class SkillRankRow:
    """Episode-averaged tax incidence for one skill rank (ascending skill)."""

    building_skill: float
    pre_tax_income: float
    tax_paid: float
    net_tax: float                 # tax - transfer; negative is a net subsidy
    post_redistribution_income: float


def per_skill_breakdown(episodes) -> list[SkillRankRow]:
    """Average tax incidence by skill rank across episodes.

    ``episodes`` yield objects with ``building_skills`` (N,),
    ``pre_tax_incomes`` (periods, N), ``taxes`` (periods, N), and
    ``transfers`` (periods,). All episodes must share the agent count and
    skill multiset; agents are sorted by skill within each episode.
    """
    episodes = list(episodes)
    if not episodes:
        raise ValueError("no episodes to analyze")
    skill_sets = {tuple(sorted(np.round(e.building_skills, 9))) for e in episodes}
    if len(skill_sets) != 1:
        raise ValueError(f"episodes mix skill multisets: {sorted(skill_sets)}")
    n = len(episodes[0].building_skills)

    acc = np.zeros((n, 4))
    for ep in episodes:
        order = np.argsort(ep.building_skills, kind="stable")
        income = ep.pre_tax_incomes.sum(axis=0)[order]
        tax = ep.taxes.sum(axis=0)[order]
        transfer_total = ep.transfers.sum()
        net = tax - transfer_total
        acc += np.stack([income, tax, net, income - net], axis=1)
    acc /= len(episodes)
    skills = sorted(episodes[0].building_skills)
    return [
        SkillRankRow(
            building_skill=float(skills[i]),
            pre_tax_income=float(acc[i, 0]),
            tax_paid=float(acc[i, 1]),
            net_tax=float(acc[i, 2]),
            post_redistribution_income=float(acc[i, 3]),
        )
        for i in range(n)
    ]


@dataclass(frozen=True)
class TaxGamingReport:
    """Actual total tax vs the tax a smoothed income stream would owe."""

    agent: int
    period_incomes: np.ndarray
    mean_income: float
    actual_total_tax: float
    smoothed_total_tax: float

    @property
    def saving_from_volatility(self) -> float:
        """Positive when alternating incomes beat reporting the average."""
        return self.smoothed_total_tax - self.actual_total_tax


def tax_gaming_report(episode, agent: int, cutoffs) -> TaxGamingReport:
    """Compare an agent's taxes against the smoothed-income counterfactual.

    The counterfactual re-taxes the agent's mean period income under each
    period's actual schedule, so for a constant schedule it equals
    periods x tax(mean income).
    """
    incomes = np.asarray(episode.pre_tax_incomes)[:, agent]
    rates = np.asarray(episode.rates)
    mean_income = float(incomes.mean())
    actual = float(np.asarray(episode.taxes)[:, agent].sum())
    smoothed = 0.0
    for p in range(len(incomes)):
        schedule = TaxSchedule(tuple(cutoffs), tuple(rates[p]))
        smoothed += tax_due(mean_income, schedule)
    return TaxGamingReport(
        agent=agent,
        period_incomes=incomes,
        mean_income=mean_income,
        actual_total_tax=actual,
        smoothed_total_tax=float(smoothed),
    )


@dataclass(frozen=True)
class PairedTTest:
    t_statistic: float
    p_value: float
    mean_difference: float
    n_pairs: int


def paired_ttest(samples_a, samples_b) -> PairedTTest:
    """Two-sided paired t-test on aligned samples.

    Degenerate cases: identical samples give t=0, p=1; zero variance with a
    nonzero mean difference is reported as an infinite statistic with p=0.
    """
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("need two aligned 1-d sample vectors")
    if a.size < 2:
        raise ValueError("need at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    n = d.size
    if sd == 0.0:
        if mean == 0.0:
            return PairedTTest(0.0, 1.0, 0.0, n)
        return PairedTTest(float(np.sign(mean)) * float("inf"), 0.0, mean, n)
    t = mean / (sd / np.sqrt(n))
    p = 2.0 * float(scipy_stats.t.sf(abs(t), df=n - 1))
    return PairedTTest(float(t), p, mean, n)


SUMMARY_COLUMNS = [
    "treatment", "seed", "equality", "productivity", "eq_times_prod",
    "swf_weighted_inverse_income", "mean_utility",
]


def export_episode_summaries(path, rows: list[dict]):
    """Deterministic CSV export: fixed column order, repr'd floats."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([_format(row.get(c, "")) for c in SUMMARY_COLUMNS])


def export_skill_breakdown(path, rows: list[SkillRankRow]):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["building_skill", "pre_tax_income", "tax_paid", "net_tax",
             "post_redistribution_income"]
        )
        for r in rows:
            writer.writerow(
                [_format(r.building_skill), _format(r.pre_tax_income),
                 _format(r.tax_paid), _format(r.net_tax),
                 _format(r.post_redistribution_income)]
            )


def export_series(path, name_to_values: dict):
    """Plain plot-data series (one column per name), no rendering deps."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    names = list(name_to_values)
    length = max((len(v) for v in name_to_values.values()), default=0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(length):
            writer.writerow(
                [_format(name_to_values[n][i]) if i < len(name_to_values[n]) else ""
                 for n in names]
            )


def _format(x):
    if isinstance(x, float):
        return repr(x)
    return x
