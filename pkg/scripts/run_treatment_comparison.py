#!/usr/bin/env python3
"""Two-phase training for several treatments at equal budgets, then paired
evaluation: the experiment behind the equality/welfare treatment tables.

Each seed shares one tax-free pretraining checkpoint across treatments, so
the comparison is paired at the seed level.
"""

import argparse
import json

from gatherbuild.env import EpisodeConfig
from gatherbuild.experiment import compare_treatments
from gatherbuild.trainer import TrainConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--treatments", nargs="+",
                        default=["learned", "random", "free", "us_federal", "saez"])
    parser.add_argument("--phase1", type=int, default=360_000)
    parser.add_argument("--phase2", type=int, default=240_000)
    parser.add_argument("--eval-episodes", type=int, default=8)
    parser.add_argument("--workers", type=int, default=2)
    parser.add_argument("--out", default="runs/compare")
    args = parser.parse_args()

    result = compare_treatments(
        EpisodeConfig(), TrainConfig(), seeds=args.seeds,
        treatments=tuple(args.treatments),
        phase_one_samples=args.phase1, phase_two_samples=args.phase2,
        eval_episodes=args.eval_episodes, out_dir=args.out,
        workers=args.workers, torch_threads=1,
    )
    print(json.dumps({k: v for k, v in result.items() if k != "per_seed"},
                     indent=2, default=float))


if __name__ == "__main__":
    main()
