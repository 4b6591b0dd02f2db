"""Evaluation runs and the treatment-comparison experiment.

``run_eval`` plays K seeded evaluation episodes for one treatment (with a
trained checkpoint where the treatment needs one) and writes replays plus a
summary CSV. ``compare_treatments`` is the desk-scale experiment: per seed,
one free-market pretraining phase, then one phase-two continuation per
treatment at equal sample budgets, then paired evaluation.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import export_episode_summaries, paired_ttest
from .controllers import make_controller
from .env import Env, EpisodeConfig
from .replay import EpisodeRecorder
from .rollout import EpisodeStats, rollout_episode
from .trainer import TrainConfig, Trainer, load_checkpoint, save_checkpoint


@dataclass
class EvalResult:
    treatment: str
    stats: list
    replay_paths: list

    def mean(self, attr: str) -> float:
        return float(np.mean([getattr(s, attr) for s in self.stats]))

    def var(self, attr: str) -> float:
        return float(np.var([getattr(s, attr) for s in self.stats]))

    def summary(self) -> dict:
        out = {"treatment": self.treatment, "episodes": len(self.stats)}
        for attr in ("equality", "productivity", "eq_times_prod",
                     "swf_weighted_inverse_income"):
            out[f"{attr}_mean"] = self.mean(attr)
            out[f"{attr}_var"] = self.var(attr)
        return out


def run_eval(
    episode_config: EpisodeConfig,
    treatment: str,
    seeds,
    checkpoint=None,
    out_dir=None,
    camelback_rates=None,
    saez_rates=None,
    random_agents: bool = False,
) -> EvalResult:
    """Play one evaluation episode per seed under a treatment.

    The ``learned`` treatment requires a checkpoint holding planner weights.
    Without any checkpoint agents play the masked-uniform random policy
    (also forced by ``random_agents``).
    """
    agent_model = planner_model = None
    if checkpoint is not None:
        agent_model, planner_model, _, _, _ = load_checkpoint(checkpoint)
    if treatment == "learned" and planner_model is None:
        raise ValueError("the learned treatment needs a checkpoint with planner weights")
    if random_agents:
        agent_model = None

    controller = None
    if treatment != "learned":
        controller = make_controller(
            treatment, episode_config.bracket_cutoffs,
            camelback_rates=camelback_rates, saez_rates=saez_rates,
        )
    stats, paths = [], []
    for seed in seeds:
        recorder = EpisodeRecorder(treatment=treatment)
        env = Env(episode_config, seed=seed)
        ep = rollout_episode(
            env, agent_model=agent_model,
            planner_model=planner_model if treatment == "learned" else None,
            controller=controller, seed=seed, recorder=recorder,
        )
        stats.append(ep)
        if out_dir is not None:
            path = Path(out_dir) / f"replay_{treatment}_seed{seed}.jsonl"
            recorder.save(path)
            paths.append(str(path))
    result = EvalResult(treatment, stats, paths)
    if out_dir is not None:
        rows = [
            {
                "treatment": treatment,
                "seed": s.seed,
                "equality": s.equality,
                "productivity": s.productivity,
                "eq_times_prod": s.eq_times_prod,
                "swf_weighted_inverse_income": s.swf_weighted_inverse_income,
                "mean_utility": float(s.final_utilities.mean()),
            }
            for s in stats
        ]
        export_episode_summaries(Path(out_dir) / f"summary_{treatment}.csv", rows)
        Path(out_dir, f"summary_{treatment}.json").write_text(
            json.dumps(result.summary(), indent=2)
        )
    return result


def phase_one_vs_random(
    episode_config: EpisodeConfig,
    train_config: TrainConfig,
    seed: int = 0,
    samples: int | None = None,
    eval_episodes: int = 20,
    out_dir="runs/phase1_smoke",
) -> dict:
    """Train agents tax-free, then compare their mean episode utility with a
    frozen masked-uniform random policy on matched evaluation seeds."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = samples or train_config.phase_one_samples
    trainer = Trainer(episode_config, train_config, treatment="free", seed=seed,
                      metrics_path=out / "phase1_metrics.csv")
    trainer.train_phase(samples, anneal=False)
    ckpt = out / "phase1.ckpt"
    save_checkpoint(ckpt, trainer.agent_model, None, episode_config, train_config,
                    trainer.samples, "free")

    eval_seeds = [20_000 + k for k in range(eval_episodes)]
    trained = run_eval(episode_config, "free", eval_seeds, checkpoint=ckpt,
                       out_dir=out / "eval_trained")
    random_policy = run_eval(episode_config, "free", eval_seeds, random_agents=True,
                             out_dir=out / "eval_random")
    u_trained = np.array([s.final_utilities.mean() for s in trained.stats])
    u_random = np.array([s.final_utilities.mean() for s in random_policy.stats])
    n = len(eval_seeds)
    se = float(np.sqrt(u_trained.var(ddof=1) / n + u_random.var(ddof=1) / n))
    diff = float(u_trained.mean() - u_random.mean())
    result = {
        "samples": trainer.samples,
        "eval_episodes": n,
        "mean_utility_trained": float(u_trained.mean()),
        "mean_utility_random": float(u_random.mean()),
        "difference": diff,
        "standard_error": se,
        "difference_in_standard_errors": diff / se if se > 0 else float("inf"),
        "checkpoint": str(ckpt),
    }
    (out / "result.json").write_text(json.dumps(result, indent=2))
    return result


def _compare_one_seed(args):
    (seed, episode_dict, train_dict, treatments, phase_one_samples,
     phase_two_samples, eval_episodes, out_dir, torch_threads) = args
    import torch

    torch.set_num_threads(torch_threads)
    episode_config = EpisodeConfig.from_dict(episode_dict)
    train_config = TrainConfig.from_dict(train_dict)

    out = Path(out_dir) / f"seed{seed}"
    out.mkdir(parents=True, exist_ok=True)

    phase1 = Trainer(episode_config, train_config, treatment="free", seed=seed,
                     metrics_path=out / "phase1_metrics.csv")
    phase1.train_phase(phase_one_samples, anneal=False)
    ckpt = out / "phase1.ckpt"
    save_checkpoint(ckpt, phase1.agent_model, None, episode_config, train_config,
                    phase1.samples, "free")

    eval_seeds = [10_000 + seed * 100 + k for k in range(eval_episodes)]
    row: dict = {"seed": seed}
    for treatment in treatments:
        agent_model, _, _, _, _ = load_checkpoint(ckpt)
        tr = Trainer(episode_config, train_config, treatment=treatment,
                     seed=seed + 7, agent_model=agent_model,
                     metrics_path=out / f"phase2_{treatment}_metrics.csv")
        tr.train_phase(phase_two_samples, anneal=(treatment == "learned"))
        ck = out / f"{treatment}.ckpt"
        save_checkpoint(ck, tr.agent_model, tr.planner_model, episode_config,
                        train_config, tr.samples, treatment)
        result = run_eval(episode_config, treatment, eval_seeds, checkpoint=ck,
                          out_dir=out / f"eval_{treatment}")
        row[treatment] = result.summary()
    return row


def compare_treatments(
    episode_config: EpisodeConfig,
    train_config: TrainConfig,
    seeds,
    treatments=("learned", "random", "free"),
    phase_one_samples: int | None = None,
    phase_two_samples: int | None = None,
    eval_episodes: int = 4,
    out_dir="runs/compare",
    workers: int = 1,
    torch_threads: int = 1,
) -> dict:
    """Per-seed phase-1 pretraining, equal-budget phase-2 per treatment,
    paired evaluation, and one-sided learned-vs-random significance.

    Returns per-seed summaries plus the paired t-test of mean eq x prod
    between the learned planner and the random-rate controller, and the
    mean equality per treatment (free-market ordering check).
    """
    phase_one_samples = phase_one_samples or train_config.phase_one_samples
    phase_two_samples = phase_two_samples or train_config.phase_two_samples
    jobs = [
        (seed, episode_config.to_dict(), train_config.to_dict(), tuple(treatments),
         phase_one_samples, phase_two_samples, eval_episodes, str(out_dir), torch_threads)
        for seed in seeds
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_compare_one_seed, jobs))
    else:
        rows = [_compare_one_seed(j) for j in jobs]
    rows.sort(key=lambda r: r["seed"])

    out: dict = {"seeds": list(seeds), "per_seed": rows}
    for treatment in treatments:
        out[f"{treatment}_eq_times_prod"] = [
            r[treatment]["eq_times_prod_mean"] for r in rows
        ]
        out[f"{treatment}_equality"] = [r[treatment]["equality_mean"] for r in rows]
    if "learned" in treatments and "random" in treatments:
        test = paired_ttest(out["learned_eq_times_prod"], out["random_eq_times_prod"])
        one_sided_p = test.p_value / 2 if test.mean_difference > 0 else 1 - test.p_value / 2
        out["learned_vs_random"] = {
            "t": test.t_statistic,
            "one_sided_p": one_sided_p,
            "mean_difference": test.mean_difference,
        }
    report = Path(out_dir) / "comparison.json"
    report.parent.mkdir(parents=True, exist_ok=True)
    report.write_text(json.dumps(out, indent=2, default=float))
    return out
