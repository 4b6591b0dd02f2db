#!/usr/bin/env python3
"""Run the desk-scale training experiments behind the acceptance suite.

Produces runs/acceptance/phase1_vs_random.json (tax-free pretraining beats a
random policy) and runs/acceptance/compare.json (learned planner vs random
rates vs free market across seeds). The acceptance tests load these
artifacts when present and re-run the experiments when they are missing, so
executing this script first keeps `pytest` fast afterwards.

Budgets are sized for a small workstation; see --help to shrink them for a
quick directional look.
"""

import argparse
import json
from pathlib import Path

import torch

from gatherbuild.env import EpisodeConfig
from gatherbuild.experiment import compare_treatments, phase_one_vs_random
from gatherbuild.trainer import TrainConfig

SMOKE_DIR = Path(__file__).resolve().parent.parent / "runs" / "acceptance"

PHASE1_SAMPLES = 2_000_000
COMPARE_SEEDS = tuple(range(10))
COMPARE_PHASE1 = 360_000
COMPARE_PHASE2 = 240_000
EVAL_EPISODES = 8


def run_phase1(samples: int) -> dict:
    result = phase_one_vs_random(
        EpisodeConfig(), TrainConfig(), seed=0, samples=samples,
        eval_episodes=20, out_dir=SMOKE_DIR / "phase1",
    )
    (SMOKE_DIR / "phase1_vs_random.json").write_text(json.dumps(result, indent=2))
    print(json.dumps(result, indent=2))
    return result


def run_compare(seeds, phase1: int, phase2: int, workers: int) -> dict:
    result = compare_treatments(
        EpisodeConfig(), TrainConfig(), seeds=list(seeds),
        treatments=("learned", "random", "free"),
        phase_one_samples=phase1, phase_two_samples=phase2,
        eval_episodes=EVAL_EPISODES, out_dir=SMOKE_DIR / "compare",
        workers=workers, torch_threads=1,
    )
    (SMOKE_DIR / "compare.json").write_text(json.dumps(result, indent=2, default=float))
    print(json.dumps({k: v for k, v in result.items() if k != "per_seed"},
                     indent=2, default=float))
    return result


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--only", choices=["phase1", "compare"], default=None)
    parser.add_argument("--phase1-samples", type=int, default=PHASE1_SAMPLES)
    parser.add_argument("--compare-phase1", type=int, default=COMPARE_PHASE1)
    parser.add_argument("--compare-phase2", type=int, default=COMPARE_PHASE2)
    parser.add_argument("--seeds", type=int, default=len(COMPARE_SEEDS))
    parser.add_argument("--workers", type=int, default=2)
    args = parser.parse_args()

    torch.set_num_threads(max(1, 2 // max(args.workers, 1)) if args.only != "phase1" else 2)
    SMOKE_DIR.mkdir(parents=True, exist_ok=True)
    if args.only in (None, "phase1"):
        torch.set_num_threads(2)
        run_phase1(args.phase1_samples)
    if args.only in (None, "compare"):
        run_compare(range(args.seeds), args.compare_phase1, args.compare_phase2,
                    args.workers)


if __name__ == "__main__":
    main()
