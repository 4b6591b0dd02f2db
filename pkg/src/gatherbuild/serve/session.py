"""Session state for human play: lobby, groups, and the per-tick episode logic.

The episode logic is synchronous and reuses the core environment unchanged
(one code path for AI and human episodes); the async server drives it with a
fixed-rate clock and feeds it at most one buffered action per player per
tick (latest wins).
"""

from __future__ import annotations

import asyncio
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .. import metrics
from ..controllers import make_controller
from ..env import AGENT_NOOP, BUILD_ACTION, Env, EpisodeConfig, MOVE_BASE
from ..replay import EpisodeRecorder
from ..tax import TaxSchedule, marginal_rate_at, tax_due
from ..world import MOVE_ORDER, NO_OWNER, ResourceKind
from .protocol import (
    CELL_EMPTY,
    CELL_HOUSE_BASE,
    CELL_STONE,
    CELL_WOOD,
    EpisodeEnd,
    EpisodeStart,
    Lobby,
    StateDelta,
    Survey,
    TaxUpdate,
)

ACTION_TO_INDEX = {
    "noop": AGENT_NOOP,
    "up": MOVE_BASE + MOVE_ORDER.index("up"),
    "down": MOVE_BASE + MOVE_ORDER.index("down"),
    "left": MOVE_BASE + MOVE_ORDER.index("left"),
    "right": MOVE_BASE + MOVE_ORDER.index("right"),
    "build": BUILD_ACTION,
}

SURVEY_QUESTIONS = [
    "What was your strategy during the episodes?",
    "Why do you think you earned the bonus you did?",
    "Was anything confusing or broken? (lag, controls, rules)",
]


@dataclass
class SessionConfig:
    """Human-play session settings (defaults follow the human rule variant)."""

    episode: EpisodeConfig = field(default_factory=EpisodeConfig.human_mode)
    tick_hz: float = 10.0
    episodes_per_player: int = 4
    treatments: tuple = ("free", "us_federal", "saez", "camelback")
    saez_rates: tuple | None = None          # fixed zero-shot rates
    camelback_rates: tuple | None = None
    group_mode: str = "fixed"                # fixed | rolling
    group_size: int = 4
    qualification: bool = False              # hide all tax information
    tutorial_seconds: float = 120.0
    bonus_usd_per_utility: float = 0.06
    replay_dir: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.group_mode not in ("fixed", "rolling"):
            raise ValueError("group_mode must be 'fixed' or 'rolling'")
        wall_clock = self.episode.episode_length / self.tick_hz
        self.episode_wall_clock_seconds = wall_clock
        for name in self.treatments:
            # Fail fast on missing rate vectors for fixed-rate treatments.
            self.controller_for(name)

    def controller_for(self, treatment: str):
        return make_controller(
            treatment, self.episode.bracket_cutoffs,
            camelback_rates=self.camelback_rates, saez_rates=self.saez_rates,
        )

    @classmethod
    def load(cls, path) -> "SessionConfig":
        raw = yaml.safe_load(Path(path).read_text()) or {}
        allowed = set(cls.__dataclass_fields__)
        unknown = set(raw) - allowed
        if unknown:
            raise ValueError(f"unknown session config key(s): {sorted(unknown)}")
        if "episode" in raw:
            overrides = dict(raw["episode"])
            raw["episode"] = EpisodeConfig.human_mode(**overrides)
        for key in ("treatments", "saez_rates", "camelback_rates"):
            if raw.get(key) is not None:
                raw[key] = tuple(raw[key])
        return cls(**raw)


def profitable_houses_left(
    building_skill: float,
    schedule: TaxSchedule,
    period_income_so_far: float,
    coin: float,
    build_labor: float,
    eta: float,
    cap: int = 500,
) -> int:
    """How many further houses this period each add positive marginal utility.

    The k-th house earns 10 x skill, taxed at the rates applicable as period
    income climbs; its post-tax coin is run through the money utility at the
    current coin level and must beat the build labor. Simulated forward until
    the first unprofitable house.
    """
    payout = 10.0 * building_skill
    z = max(period_income_so_far, 0.0)
    c = max(coin, 0.0)
    count = 0
    for _ in range(cap):
        net = payout - (tax_due(z + payout, schedule) - tax_due(z, schedule))
        gain = metrics.crra(c + net, eta) - metrics.crra(c, eta) - build_labor
        if gain <= 0.0:
            break
        count += 1
        z += payout
        c += net
    return count


class TickClock:
    """Absolute-deadline scheduler: long-run average interval is exact."""

    def __init__(self, hz: float):
        self.interval = 1.0 / hz
        self._next = None

    async def tick(self):
        now = time.monotonic()
        if self._next is None:
            self._next = now
        self._next += self.interval
        delay = self._next - now
        if delay > 0:
            await asyncio.sleep(delay)


class EpisodeRunner:
    """Synchronous human-episode driver around one core Env instance."""

    def __init__(self, config: SessionConfig, treatment: str, seed: int,
                 recorder: EpisodeRecorder | None = None):
        self.config = config
        self.treatment = treatment
        self.env = Env(config.episode, seed=seed)
        self.controller = config.controller_for(treatment)
        self.recorder = recorder
        self.controller_rng = np.random.default_rng(seed + 0xC0FFEE)
        self.env.reset()
        if recorder is not None:
            recorder.start(self.env)
        self._last_coin = self.env.world.coin_endowments().copy()
        self._prev_cells = self._cell_codes()
        self.last_rates_sent = None

    def _cell_codes(self) -> np.ndarray:
        w = self.env.world
        codes = np.zeros((w.world_map.height, w.world_map.width), dtype=np.int16)
        wood = w.resource & (w.world_map.source == int(ResourceKind.WOOD))
        stone = w.resource & (w.world_map.source == int(ResourceKind.STONE))
        codes[wood] = CELL_WOOD
        codes[stone] = CELL_STONE
        houses = w.houses != NO_OWNER
        codes[houses] = CELL_HOUSE_BASE + w.houses[houses]
        return codes

    def episode_start_message(self, agent_id: int) -> EpisodeStart:
        wm = self.env.world.world_map
        agent = self.env.world.agents[agent_id]
        water = [[int(r), int(c)] for r, c in zip(*np.nonzero(wm.water))]
        sources = [
            [int(r), int(c), int(wm.source[r, c]) + 1]
            for r, c in zip(*np.nonzero(wm.source != -1))
        ]
        return EpisodeStart(
            episode_index=0,
            agent_id=agent_id,
            rows=wm.height,
            cols=wm.width,
            water=water,
            sources=sources,
            building_skill=agent.building_skill,
            collection_skill=agent.collection_skill,
            episode_length=self.config.episode.episode_length,
            tax_period=self.config.episode.tax_period,
            tick_hz=self.config.tick_hz,
            qualification=self.config.qualification,
        )

    def full_delta_cells(self) -> list:
        codes = self._cell_codes()
        return [
            [int(r), int(c), int(codes[r, c])]
            for r, c in zip(*np.nonzero(codes != CELL_EMPTY))
        ]

    @property
    def done(self) -> bool:
        return self.env.t >= self.config.episode.episode_length

    def advance(self, actions_by_agent: dict) -> dict:
        """Advance one tick given at most one action name per agent.

        Returns the broadcast payload: changed cells, agent positions, a HUD
        per agent, and the tax update when rates were (re)applied this tick.
        """
        env = self.env
        n = env.config.n_agents
        actions = np.full(n, AGENT_NOOP, dtype=int)
        for agent_id, name in actions_by_agent.items():
            actions[agent_id] = ACTION_TO_INDEX.get(name, AGENT_NOOP)

        rates = None
        if self.controller is not None and env.t % env.config.tax_period == 0:
            rates = self.controller.rates_at_period_start(self.controller_rng)
        outcome = env.step(actions, planner_rates=rates)
        if self.recorder is not None:
            self.recorder.record_step(actions, outcome)
        if self.controller is not None and "settlement" in outcome.info:
            self.controller.observe_settlement(outcome.info["settlement"])
            self.controller.aggregate()

        codes = self._cell_codes()
        changed = np.nonzero(codes != self._prev_cells)
        cells = [[int(r), int(c), int(codes[r, c])] for r, c in zip(*changed)]
        self._prev_cells = codes

        coins = env.world.coin_endowments()
        huds = {i: self._hud(i, coins) for i in range(n)}
        self._last_coin = coins.copy()

        tax_update = None
        if "rates_set" in outcome.info and not self.config.qualification:
            tax_update = TaxUpdate(
                t=outcome.info["tick"],
                rates=list(env.schedule.rates),
                cutoffs=[c for c in env.schedule.cutoffs[1:-1]],
            )
            self.last_rates_sent = tax_update
        return {
            "tick": outcome.info["tick"],
            "cells": cells,
            "agents": [[i, int(a.position[0]), int(a.position[1])]
                       for i, a in enumerate(env.world.agents)],
            "huds": huds,
            "tax_update": tax_update,
            "done": outcome.done,
        }

    def _hud(self, agent_id: int, coins) -> dict:
        env = self.env
        cfg = self.config
        agent = env.world.agents[agent_id]
        utility = float(env._utilities[agent_id])
        period = env.config.tax_period
        income = max(env.period_income(agent_id), 0.0)
        hud = {
            "coin": float(coins[agent_id]),
            "wood": int(agent.wood + agent.escrow_wood),
            "stone": int(agent.stone + agent.escrow_stone),
            "labor": float(agent.labor),
            "houses_built": int(agent.houses_built),
            "utility": utility,
            "bonus_usd": utility * cfg.bonus_usd_per_utility,
            "last_coin_change": float(coins[agent_id] - self._last_coin[agent_id]),
            "remaining_ticks": int(env.config.episode_length - env.t),
            "remaining_seconds": (env.config.episode_length - env.t) / cfg.tick_hz,
            "period_ticks_left": int(period - (env.t % period)) % period or period,
        }
        if not cfg.qualification:
            hud["tax_rates"] = list(env.schedule.rates)
            hud["marginal_rate"] = marginal_rate_at(income, env.schedule)
            hud["profitable_houses_left"] = profitable_houses_left(
                agent.building_skill, env.schedule, income, float(coins[agent_id]),
                env.config.labor_costs.build, env.config.utility_eta,
            )
        return hud


@dataclass
class Player:
    token: str
    pseudonym: str
    outbox: asyncio.Queue = field(default_factory=asyncio.Queue)
    connected: bool = False
    phase: str = "tutorial"
    tutorial_done_at: float = 0.0
    episodes_played: int = 0
    bonus_total: float = 0.0
    pending_action: str | None = None
    group: object | None = None
    agent_id: int | None = None
    survey_answers: dict | None = None
    completion_code: str | None = None

    def send(self, msg):
        self.outbox.put_nowait(msg)


class Group:
    """Four players bound to the four environment agents for an episode run."""

    def __init__(self, session, players: list, group_index: int):
        self.session = session
        self.players = players
        self.index = group_index
        cfg = session.config
        rng = np.random.default_rng(cfg.seed * 7919 + group_index)
        if cfg.group_mode == "fixed":
            order = rng.permutation(len(cfg.treatments))
            self.treatments = [cfg.treatments[i] for i in order]
        else:
            self.treatments = [
                cfg.treatments[int(rng.integers(len(cfg.treatments)))]
            ]
        for agent_id, player in enumerate(players):
            player.group = self
            player.agent_id = agent_id
            player.phase = "playing"
