"""Command-line interface: train, eval, replay, analyze, saez-fit, serve."""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from .analysis import (
    export_skill_breakdown,
    paired_ttest,
    per_skill_breakdown,
    tax_gaming_report,
)
from .config import ExperimentConfig, load_experiment_config
from .replay import load_replay, replay_episode
from .rollout import EpisodeStats
from .tax import fit_elasticity, saez_schedule
from .trainer import train as train_run


def _load_config(path) -> ExperimentConfig:
    return load_experiment_config(path) if path else ExperimentConfig()


def _parse_seeds(seeds, fallback):
    if seeds:
        return tuple(int(s) for s in seeds.split(","))
    return tuple(fallback)


@click.group()
def main():
    """Gather-and-build economy: training, evaluation, analysis, serving."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--treatment", default=None, help="free|us_federal|saez|camelback|learned|random")
@click.option("--seeds", default=None, help="comma-separated list")
@click.option("--output", "output_dir", default=None)
@click.option("--phase1-checkpoint", type=click.Path(exists=True), default=None)
def train(config_path, treatment, seeds, output_dir, phase1_checkpoint):
    """Two-phase training for one treatment across seeds."""
    cfg = _load_config(config_path)
    treatment = treatment or cfg.treatment
    out = Path(output_dir or cfg.output_dir)
    for seed in _parse_seeds(seeds, cfg.seeds):
        result = train_run(
            cfg.episode, cfg.train, treatment, out / f"seed{seed}", seed=seed,
            phase_one_checkpoint=phase1_checkpoint,
            camelback_rates=cfg.camelback_rates,
            progress=lambda row: click.echo(
                f"seed {seed} it {row.get('iteration')} samples {row.get('samples')} "
                f"ep_swf {row.get('episode_eq_times_prod', float('nan')):.2f}"
            ),
        )
        click.echo(f"seed {seed}: checkpoint {result['checkpoint']}")


@main.command("eval")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--treatment", default=None)
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--seeds", default=None)
@click.option("--episodes", type=int, default=None)
@click.option("--output", "output_dir", default=None)
def eval_cmd(config_path, treatment, checkpoint, seeds, episodes, output_dir):
    """Run evaluation episodes; write replays and a summary CSV."""
    from .experiment import run_eval

    cfg = _load_config(config_path)
    treatment = treatment or cfg.treatment
    base_seeds = _parse_seeds(seeds, cfg.seeds)
    if episodes:
        base_seeds = tuple(
            10_000 + s * 100 + k for s in base_seeds for k in range(episodes)
        )
    out = Path(output_dir or cfg.output_dir)
    result = run_eval(
        cfg.episode, treatment, base_seeds, checkpoint=checkpoint, out_dir=out,
        camelback_rates=cfg.camelback_rates, saez_rates=cfg.saez_rates,
    )
    click.echo(json.dumps(result.summary(), indent=2))


@main.command()
@click.argument("replay_path", type=click.Path(exists=True))
@click.option("--no-verify", is_flag=True, default=False)
def replay(replay_path, no_verify):
    """Re-simulate a replay file and verify it reproduces exactly."""
    rp = load_replay(replay_path)
    env = replay_episode(rp, verify=not no_verify)
    coins = env.world.coin_endowments()
    click.echo(
        json.dumps(
            {
                "treatment": rp.treatment,
                "seed": rp.seed,
                "ticks": len(rp.ticks),
                "final_coins": coins.tolist(),
                "verified": not no_verify,
            },
            indent=2,
        )
    )


def _episode_stats_from_replay(path) -> EpisodeStats:
    rp = load_replay(path)
    settles = rp.settlements()
    n = len(rp.end["final_coins"])
    coins = np.asarray(rp.end["final_coins"], dtype=float)
    return EpisodeStats(
        seed=rp.seed,
        final_coins=coins,
        final_utilities=np.asarray(rp.ticks[-1]["u"], dtype=float),
        final_labors=np.asarray(rp.end["final_labors"], dtype=float),
        equality=rp.end["equality"],
        productivity=rp.end["productivity"],
        eq_times_prod=rp.end["eq_times_prod"],
        swf_weighted_inverse_income=float("nan"),
        building_skills=np.asarray(rp.end["building_skills"], dtype=float),
        pre_tax_incomes=np.array([s["taxable"] for s in settles]),
        taxes=np.array([s["taxes"] for s in settles]),
        transfers=np.array([s["transfer"] for s in settles]),
        rates=np.array([s["rates"] for s in settles]),
        total_rewards=np.zeros(n),
        planner_return=float("nan"),
    )


@main.command()
@click.argument("replay_paths", nargs=-1, type=click.Path(exists=True))
@click.option("--output", "output_dir", default="runs/analysis")
@click.option("--gaming-agent", type=int, default=None,
              help="also write the income-smoothing counterfactual for this agent")
@click.option("--min-productivity", type=float, default=None,
              help="drop episodes below this productivity before averaging")
def analyze(replay_paths, output_dir, gaming_agent, min_productivity):
    """Per-skill breakdowns (and optional tax-gaming report) over replays."""
    if not replay_paths:
        raise click.UsageError("pass at least one replay file")
    episodes = [_episode_stats_from_replay(p) for p in replay_paths]
    if min_productivity is not None:
        episodes = [e for e in episodes if e.productivity >= min_productivity]
        if not episodes:
            raise click.ClickException("all episodes fell below the productivity filter")
    rows = per_skill_breakdown(episodes)
    out = Path(output_dir)
    export_skill_breakdown(out / "per_skill.csv", rows)
    click.echo(f"wrote {out / 'per_skill.csv'}")
    if gaming_agent is not None:
        rp = load_replay(replay_paths[0])
        report = tax_gaming_report(episodes[0], gaming_agent, rp.config.bracket_cutoffs)
        payload = {
            "agent": report.agent,
            "period_incomes": report.period_incomes.tolist(),
            "mean_income": report.mean_income,
            "actual_total_tax": report.actual_total_tax,
            "smoothed_total_tax": report.smoothed_total_tax,
            "saving_from_volatility": report.saving_from_volatility,
        }
        (out / "tax_gaming.json").write_text(json.dumps(payload, indent=2))
        click.echo(json.dumps(payload, indent=2))


@main.command("saez-fit")
@click.argument("replay_paths", nargs=-1, type=click.Path(exists=True))
@click.option("--default-elasticity", type=float, default=0.5)
@click.option("--output", type=click.Path(), default=None)
def saez_fit(replay_paths, default_elasticity, output):
    """Fit the income elasticity from replays and emit a Saez schedule."""
    if not replay_paths:
        raise click.UsageError("pass at least one replay file")
    incomes, rates = [], []
    cutoffs = None
    for path in replay_paths:
        rp = load_replay(path)
        cutoffs = rp.config.bracket_cutoffs
        for s in rp.settlements():
            sched_rates = s["rates"]
            from .tax import TaxSchedule, marginal_rate_at

            schedule = TaxSchedule(tuple(cutoffs), tuple(sched_rates))
            for z in s["taxable"]:
                incomes.append(z)
                rates.append(marginal_rate_at(z, schedule))
    fit = fit_elasticity(incomes, rates, default=default_elasticity)
    payload = {
        "elasticity": fit.elasticity,
        "defaulted": fit.defaulted,
        "n_samples": fit.n_samples,
        "log_z0": fit.log_z0,
    }
    try:
        schedule = saez_schedule(np.asarray(incomes), fit.elasticity, cutoffs=cutoffs)
        payload["schedule"] = schedule.to_dict()
    except ValueError as err:
        payload["schedule_error"] = str(err)
    text = json.dumps(payload, indent=2)
    if output:
        Path(output).write_text(text)
    click.echo(text)


@main.command()
@click.option("--host", default="127.0.0.1", envvar="GATHERBUILD_HOST")
@click.option("--port", type=int, default=8000, envvar="GATHERBUILD_PORT")
@click.option("--session-config", type=click.Path(exists=True), default=None,
              envvar="GATHERBUILD_SESSION_CONFIG")
def serve(host, port, session_config):
    """Run the real-time human-play server."""
    import uvicorn

    from .serve.server import create_app
    from .serve.session import SessionConfig

    cfg = SessionConfig.load(session_config) if session_config else SessionConfig()
    uvicorn.run(create_app(cfg), host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
