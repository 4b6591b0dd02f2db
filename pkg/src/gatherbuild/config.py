"""Experiment configuration: one structured YAML file, strictly validated.

Keys mirror the environment/training parameter names; unknown keys are
errors so typos fail fast instead of silently using defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .controllers import TREATMENTS
from .env import EpisodeConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    treatment: str = "free"
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple = (0,)
    output_dir: str = "runs/out"
    eval_episodes: int = 5
    camelback_rates: tuple | None = None
    saez_rates: tuple | None = None
    # Analyses of human-play data drop episodes below this productivity.
    min_episode_productivity: float | None = None

    def __post_init__(self):
        if self.treatment not in TREATMENTS:
            raise ConfigError(
                f"unknown treatment {self.treatment!r}; expected one of {TREATMENTS}"
            )
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")

    def to_dict(self) -> dict:
        return {
            "treatment": self.treatment,
            "episode": self.episode.to_dict(),
            "train": self.train.to_dict(),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "eval_episodes": self.eval_episodes,
            "camelback_rates": list(self.camelback_rates) if self.camelback_rates else None,
            "saez_rates": list(self.saez_rates) if self.saez_rates else None,
            "min_episode_productivity": self.min_episode_productivity,
        }


def _check_unknown(d: dict, allowed, where: str):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def experiment_config_from_dict(d: dict) -> ExperimentConfig:
    _check_unknown(d, [f.name for f in fields(ExperimentConfig)], "experiment config")
    d = dict(d)
    if "episode" in d:
        epi = dict(d["episode"])
        _check_unknown(
            epi, list(EpisodeConfig().to_dict().keys()), "episode config"
        )
        d["episode"] = EpisodeConfig.from_dict(epi)
    if "train" in d:
        tr = dict(d["train"])
        _check_unknown(tr, list(TrainConfig().to_dict().keys()), "train config")
        d["train"] = TrainConfig.from_dict(tr)
    for key in ("seeds", "camelback_rates", "saez_rates"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    return ExperimentConfig(**d)


def load_experiment_config(path) -> ExperimentConfig:
    raw = yaml.safe_load(Path(path).read_text())
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return experiment_config_from_dict(raw)


def save_experiment_config(path, cfg: ExperimentConfig):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
