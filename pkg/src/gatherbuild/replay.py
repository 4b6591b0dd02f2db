"""Episode replays: a line-delimited, versioned event log per episode.

A replay holds everything needed to re-simulate an episode bit-exactly
under the same build: the episode config (including the map text), the
environment seed, every agent action, and the rate vector applied at each
period start. Per-tick welfare metrics are recorded alongside so a replay
can be verified by re-running it and comparing every tick.

Format: one JSON object per line. First line is the header (kind
``header``), then one ``tick`` record per step, then a ``end`` summary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .env import Env, EpisodeConfig

REPLAY_VERSION = 1


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


class EpisodeRecorder:
    """Collects the event stream while an episode is rolled out."""

    def __init__(self, treatment: str = "free"):
        self.treatment = treatment
        self.lines: list[dict] = []

    def start(self, env: Env):
        cfg = env.config
        self.lines = [
            {
                "kind": "header",
                "version": REPLAY_VERSION,
                "config": cfg.to_dict(),
                "config_hash": cfg.config_hash(),
                "seed": env._seed,
                "treatment": self.treatment,
            }
        ]

    def record_step(self, agent_actions, outcome):
        info = outcome.info
        coins = None
        event: dict = {
            "kind": "tick",
            "t": info["tick"],
            "a": _jsonable(np.asarray(agent_actions, dtype=int)),
        }
        if "rates_set" in info:
            event["rates"] = _jsonable(info["rates_set"])
        if info.get("trades"):
            event["trades"] = [
                [int(t.resource), t.price, t.buyer, t.seller] for t in info["trades"]
            ]
        if info.get("builds"):
            event["builds"] = [
                [b["agent"], b["position"][0], b["position"][1], b["payout"]]
                for b in info["builds"]
            ]
        if "settlement" in info:
            s = info["settlement"]
            event["settle"] = {
                "period": s.period,
                "incomes": _jsonable(s.incomes),
                "taxable": _jsonable(s.taxable),
                "taxes": _jsonable(s.taxes),
                "transfer": float(s.transfer),
                "rates": _jsonable(s.rates),
            }
        event["u"] = _jsonable(info["utilities"])
        event["swf"] = float(info["swf"])
        self.lines.append(event)

    def finish(self, env: Env, stats=None):
        coins = env.world.coin_endowments()
        self.lines.append(
            {
                "kind": "end",
                "final_coins": _jsonable(coins),
                "final_labors": _jsonable(env.world.labors()),
                "equality": metrics.equality(coins),
                "productivity": metrics.productivity(coins),
                "eq_times_prod": metrics.swf_eq_times_prod(coins),
                "building_skills": _jsonable(
                    [a.building_skill for a in env.world.agents]
                ),
            }
        )

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.lines:
                fh.write(json.dumps(line) + "\n")


@dataclass
class Replay:
    header: dict
    ticks: list
    end: dict

    @property
    def config(self) -> EpisodeConfig:
        return EpisodeConfig.from_dict(self.header["config"])

    @property
    def seed(self) -> int:
        return self.header["seed"]

    @property
    def treatment(self) -> str:
        return self.header["treatment"]

    def settlements(self) -> list[dict]:
        return [t["settle"] for t in self.ticks if "settle" in t]

    def agent_actions(self) -> np.ndarray:
        return np.array([t["a"] for t in self.ticks], dtype=int)


def load_replay(path) -> Replay:
    header, ticks, end = None, [], None
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = json.loads(raw)
            if line["kind"] == "header":
                if line["version"] != REPLAY_VERSION:
                    raise ValueError(f"unsupported replay version {line['version']}")
                header = line
            elif line["kind"] == "tick":
                ticks.append(line)
            elif line["kind"] == "end":
                end = line
    if header is None or end is None:
        raise ValueError("replay is missing its header or end record")
    return Replay(header, ticks, end)


class ReplayMismatch(AssertionError):
    pass


def replay_episode(replay: Replay, verify: bool = True) -> Env:
    """Re-simulate a replay; with ``verify`` every recorded per-tick metric
    and the final state must reproduce exactly."""
    env = Env(replay.config, seed=replay.seed)
    env.reset()
    for event in replay.ticks:
        rates = event.get("rates")
        outcome = env.step(event["a"], planner_rates=rates)
        if verify:
            if not np.array_equal(np.asarray(event["u"]), outcome.info["utilities"]):
                raise ReplayMismatch(f"utilities diverged at tick {event['t']}")
            if outcome.info["swf"] != event["swf"]:
                raise ReplayMismatch(f"swf diverged at tick {event['t']}")
            if "settle" in event:
                s = outcome.info.get("settlement")
                if s is None or not np.array_equal(
                    np.asarray(event["settle"]["taxes"]), s.taxes
                ):
                    raise ReplayMismatch(f"settlement diverged at tick {event['t']}")
    if verify:
        final = np.asarray(replay.end["final_coins"])
        if not np.array_equal(final, env.world.coin_endowments()):
            raise ReplayMismatch("final coin endowments diverged")
    return env
