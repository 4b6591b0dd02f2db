"""Episode orchestration: the tick loop, action spaces, masks, observations,
agent/planner rewards, and tax-period scheduling.

One Env instance owns a world, an order book, and the active tax schedule.
Each tick: resources spawn; agent actions execute in a freshly randomized
order; orders expire; on the first tick of a tax period the planner's rates
take effect; on the last tick the period settles (taxes collected, revenue
redistributed evenly). Agent reward is the per-tick change in utility,
planner reward the per-tick change in social welfare.

Agent action head (50): 0 NO-OP, 1-4 move up/down/left/right, 5 build,
6-49 trade templates in the market module's documented order.
Planner action heads (7 x 22): per bracket, 0 NO-OP (keep the current rate),
1..21 the rates 0.00, 0.05, ..., 1.00.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .market import (
    BID,
    MAX_OPEN_ORDERS,
    N_PRICE_LEVELS,
    N_TRADE_ACTIONS,
    OrderBook,
    market_observation,
    trade_action_decode,
)
from .tax import (
    US_FEDERAL_CUTOFFS,
    ElasticityBuffer,
    PeriodLedger,
    TaxSchedule,
    free_market_schedule,
    marginal_rate_at,
    settle_period,
)
from .world import (
    HUMAN_LABOR_COSTS,
    LaborCosts,
    MOVE_ORDER,
    ResourceKind,
    World,
    default_map,
    load_map,
)

N_AGENT_ACTIONS = 1 + 4 + 1 + N_TRADE_ACTIONS      # 50
AGENT_NOOP = 0
MOVE_BASE = 1
BUILD_ACTION = 5
TRADE_BASE = 6

N_PLANNER_HEADS = 7
RATE_STEP = 0.05
N_RATE_LEVELS = 21                                  # 0.00 .. 1.00
PLANNER_ACTIONS_PER_HEAD = N_RATE_LEVELS + 1        # + NO-OP
PLANNER_NOOP = 0

COIN_SCALE = 100.0       # coin-valued features are divided by this
LABOR_SCALE = 10.0
TRADE_COUNT_SCALE = 100.0  # episode-cumulative trade tallies are unbounded

_TRADE_TEMPLATES = [trade_action_decode(i) for i in range(N_TRADE_ACTIONS)]


def planner_rate_for_index(index: int) -> float:
    """Rate encoded by a planner sub-action; index 0 is NO-OP (no rate)."""
    if index == PLANNER_NOOP:
        raise ValueError("NO-OP encodes no rate")
    return (index - 1) * RATE_STEP


@dataclass(frozen=True)
class EpisodeConfig:
    """Environment settings for one episode family."""

    n_agents: int = 4
    episode_length: int = 1000           # H
    tax_period: int = 100                # M; H/M tax periods per episode
    map_text: str | None = None          # None selects the shipped quadrant map
    respawn_probability: float = 0.01
    labor_costs: LaborCosts = field(default_factory=LaborCosts)
    utility_eta: float = 0.23
    bracket_cutoffs: tuple = US_FEDERAL_CUTOFFS
    swf_mode: str = "eq_times_prod"      # or weighted_{utilitarian,rawlsian,inverse_income}
    trading_enabled: bool = True
    populate_sources_at_reset: bool = True
    observation_window: int = 11

    def __post_init__(self):
        if self.n_agents < 2:
            raise ValueError("need at least two agents")
        if self.episode_length % self.tax_period != 0:
            raise ValueError("tax period must divide the episode length")
        if self.observation_window % 2 != 1:
            raise ValueError("observation window must be odd")

    @classmethod
    def human_mode(cls, **overrides) -> "EpisodeConfig":
        """The human-play rule variant: no trading, build-only labor (15),
        3000 ticks with 300-tick periods, bracket cutoffs scaled down 3x."""
        base = dict(
            episode_length=3000,
            tax_period=300,
            labor_costs=HUMAN_LABOR_COSTS,
            bracket_cutoffs=tuple(c / 3.0 for c in US_FEDERAL_CUTOFFS),
            trading_enabled=False,
        )
        base.update(overrides)
        return cls(**base)

    @property
    def n_periods(self) -> int:
        return self.episode_length // self.tax_period

    def to_dict(self) -> dict:
        d = {
            "n_agents": self.n_agents,
            "episode_length": self.episode_length,
            "tax_period": self.tax_period,
            "map_text": self.map_text,
            "respawn_probability": self.respawn_probability,
            "labor_costs": {
                "move": self.labor_costs.move,
                "gather": self.labor_costs.gather,
                "trade": self.labor_costs.trade,
                "build": self.labor_costs.build,
            },
            "utility_eta": self.utility_eta,
            "bracket_cutoffs": ["inf" if np.isinf(c) else c for c in self.bracket_cutoffs],
            "swf_mode": self.swf_mode,
            "trading_enabled": self.trading_enabled,
            "populate_sources_at_reset": self.populate_sources_at_reset,
            "observation_window": self.observation_window,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeConfig":
        d = dict(d)
        if "labor_costs" in d:
            d["labor_costs"] = LaborCosts(**d["labor_costs"])
        if "bracket_cutoffs" in d:
            d["bracket_cutoffs"] = tuple(
                float("inf") if c in ("inf", ".inf") else float(c)
                for c in d["bracket_cutoffs"]
            )
        if "map_text" in d and d["map_text"] is None:
            d.pop("map_text")
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, **kw) -> "EpisodeConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class ObservationSpec:
    """Shapes and layout of the encoded observations.

    World tensor channels: 0 water, 1 wood source, 2 stone source,
    3 wood unit, 4 stone unit, then one position channel per agent, then one
    house-ownership channel per agent. Agents see an egocentric window of
    this tensor with their own position/house channels rotated to the front;
    the planner sees the full unrotated tensor.
    """

    n_agents: int
    window: int
    world_shape: tuple

    @property
    def n_channels(self) -> int:
        return 5 + 2 * self.n_agents

    @property
    def agent_spatial_shape(self) -> tuple:
        return (self.n_channels, self.window, self.window)

    @property
    def planner_spatial_shape(self) -> tuple:
        return (self.n_channels, *self.world_shape)

    @property
    def agent_vector_dim(self) -> int:
        # inventory 3 + escrow 3 + skills 2 + labor 1
        # + market own/other counts 88 + avg prices 2 + trade counts 22
        # + rates 7 + own marginal 1 + progress 2 + prev incomes N
        return 9 + 4 * 2 * N_PRICE_LEVELS + 2 + 2 * N_PRICE_LEVELS + 10 + self.n_agents

    @property
    def agent_marginal_rate_index(self) -> int:
        return 9 + 4 * 2 * N_PRICE_LEVELS + 2 + 2 * N_PRICE_LEVELS

    @property
    def agent_rates_slice(self) -> slice:
        start = self.agent_marginal_rate_index + 1
        return slice(start, start + N_PLANNER_HEADS)

    @property
    def agent_prev_incomes_slice(self) -> slice:
        start = self.agent_rates_slice.stop + 2
        return slice(start, start + self.n_agents)

    @property
    def planner_vector_dim(self) -> int:
        # per-agent public 6N + market counts 44 + avg 2 + trade counts 22
        # + rates 7 + progress 2 + sorted prev incomes N + prev income N
        # + prev marginal rate N
        return 6 * self.n_agents + 2 * 2 * N_PRICE_LEVELS + 2 + 2 * N_PRICE_LEVELS + 9 + 3 * self.n_agents


@dataclass
class StepOutcome:
    """Observations, masks, rewards, and bookkeeping for one transition."""

    agent_spatial: np.ndarray      # (N, C, w, w) float32
    agent_vector: np.ndarray       # (N, Dv) float32
    planner_spatial: np.ndarray    # (C, H, W) float32
    planner_vector: np.ndarray     # (Dp,) float32
    agent_masks: np.ndarray        # (N, 50) bool
    planner_masks: np.ndarray      # (7, 22) bool
    rewards: np.ndarray            # (N,)
    planner_reward: float
    done: bool
    info: dict


class Env:
    """One environment instance. Single-writer; replicas are independent."""

    def __init__(self, config: EpisodeConfig, seed: int = 0):
        self.config = config
        self.obs_spec: ObservationSpec | None = None
        self.annealing_cap = 1.0         # trainers lower this during phase two
        self._seed = seed
        self.reset(seed)

    # -- lifecycle -------------------------------------------------------------

    def reset(self, seed: int | None = None) -> StepOutcome:
        cfg = self.config
        if seed is not None:
            self._seed = seed
        self.rng = np.random.default_rng(self._seed)
        world_map = load_map(cfg.map_text) if cfg.map_text else default_map()
        self.world = World.create(
            world_map,
            cfg.n_agents,
            self.rng,
            labor_costs=cfg.labor_costs,
            respawn_probability=cfg.respawn_probability,
            populate_sources=cfg.populate_sources_at_reset,
        )
        self.book = OrderBook(cfg.n_agents)
        self.schedule = free_market_schedule(cfg.bracket_cutoffs)
        self.ledger = PeriodLedger()
        self.elasticity_buffer = ElasticityBuffer()
        self.t = 0
        self.period_incomes = np.zeros(cfg.n_agents)
        self.prev_period_incomes = np.zeros(cfg.n_agents)
        self.prev_period_marginal_rates = np.zeros(cfg.n_agents)

        self.obs_spec = ObservationSpec(
            cfg.n_agents, cfg.observation_window, (world_map.height, world_map.width)
        )
        self._init_obs_buffers()
        self._utilities = self._current_utilities()
        self._swf = self._current_swf()
        outcome = self._observe(
            rewards=np.zeros(cfg.n_agents), planner_reward=0.0, done=False, info={}
        )
        return outcome

    # -- reward plumbing ---------------------------------------------------------

    def _current_utilities(self) -> np.ndarray:
        eta = self.config.utility_eta
        return np.array(
            [metrics.utility(a.total_coin, a.labor, eta) for a in self.world.agents]
        )

    def _current_swf(self) -> float:
        coins = self.world.coin_endowments()
        mode = self.config.swf_mode
        if mode == "eq_times_prod":
            return metrics.swf_eq_times_prod(coins)
        if mode.startswith("weighted_"):
            return metrics.swf_weighted(
                coins, self.world.labors(), mode[len("weighted_"):], self.config.utility_eta
            )
        raise ValueError(f"unknown swf mode {mode!r}")

    def period_income(self, agent_id: int) -> float:
        """Income accrued so far in the current period (may be negative)."""
        return float(self.period_incomes[agent_id])

    # -- stepping ----------------------------------------------------------------

    def step(self, agent_actions, planner_action=None, planner_rates=None) -> StepOutcome:
        """Advance one tick.

        ``planner_action``: 7 sub-action indices from the learned planner
        (NO-OP keeps a bracket's current rate). ``planner_rates``: direct
        rate vector from a formulaic controller (the 5% grid only binds
        neural planners). Both are ignored off period-start ticks.
        """
        cfg = self.config
        if self.t >= cfg.episode_length:
            raise RuntimeError("episode is complete; call reset()")
        agent_actions = np.asarray(agent_actions, dtype=int)
        info: dict = {"tick": self.t, "trades": [], "builds": [], "invalid_actions": []}

        self.world.spawn_resources(self.rng)

        if planner_action is not None:
            planner_action = np.asarray(planner_action, dtype=int)
            bad = ~self._planner_masks[np.arange(N_PLANNER_HEADS), planner_action]
            if bad.any():
                info["invalid_actions"].append(("planner", planner_action.copy()))
                planner_action = planner_action.copy()
                planner_action[bad] = PLANNER_NOOP

        for i in self.rng.permutation(cfg.n_agents):
            action = int(agent_actions[i])
            if not self._agent_masks[i, action]:
                info["invalid_actions"].append((int(i), action))
                continue
            self._apply_agent_action(int(i), action, info)

        expired = self.book.step_expire(self.world)
        if expired:
            info["expired_orders"] = len(expired)

        # Tax hooks last: rates sampled this tick take effect at period
        # starts, settlement closes the period on its final tick.
        if self.t % cfg.tax_period == 0:
            rates = self._incoming_rates(planner_action, planner_rates)
            if rates is not None:
                self.schedule = self.schedule.with_rates(rates)
            info["rates_set"] = list(self.schedule.rates)

        if self.t % cfg.tax_period == cfg.tax_period - 1:
            self._settle(info)

        self.t += 1
        done = self.t == cfg.episode_length

        utilities = self._current_utilities()
        swf = self._current_swf()
        rewards = utilities - self._utilities
        planner_reward = swf - self._swf
        self._utilities, self._swf = utilities, swf
        info["utilities"] = utilities
        info["swf"] = swf
        return self._observe(rewards, planner_reward, done, info)

    def _incoming_rates(self, planner_action, planner_rates):
        if planner_rates is not None:
            rates = np.clip(np.asarray(planner_rates, dtype=float), 0.0, 1.0)
            if rates.shape != (self.schedule.n_brackets,):
                raise ValueError("rate vector has wrong length")
            return rates
        if planner_action is not None:
            rates = list(self.schedule.rates)
            for head, idx in enumerate(planner_action):
                if idx != PLANNER_NOOP:
                    rates[head] = planner_rate_for_index(int(idx))
            return rates
        return None

    def _apply_agent_action(self, i: int, action: int, info: dict):
        if action == AGENT_NOOP:
            return
        if MOVE_BASE <= action < MOVE_BASE + 4:
            self.world.move_agent(i, MOVE_ORDER[action - MOVE_BASE], self.rng)
            return
        if action == BUILD_ACTION:
            payout = self.world.build(i)
            if payout is not None:
                self.period_incomes[i] += payout
                info["builds"].append(
                    {"agent": i, "position": self.world.agents[i].position, "payout": payout}
                )
            return
        template = _TRADE_TEMPLATES[action - TRADE_BASE]
        order = type(template)(
            owner=i, side=template.side, resource=template.resource, price=template.price
        )
        accepted, trade, _ = self.book.submit(self.world, order)
        if trade is not None:
            self.period_incomes[trade.buyer] -= trade.price
            self.period_incomes[trade.seller] += trade.price
            info["trades"].append(trade)

    def _settle(self, info: dict):
        period = self.t // self.config.tax_period
        settlement = settle_period(period, self.period_incomes, self.schedule)
        for i, agent in enumerate(self.world.agents):
            net = settlement.adjustments[i]
            if net < 0 and agent.coin + net < -1e-12:
                self._free_escrowed_coin(i, -net - agent.coin)
            agent.coin += net
            if agent.coin < 0:      # guard against float dust only
                agent.coin = 0.0
        self.ledger.record(settlement)
        self.elasticity_buffer.extend(settlement.taxable, settlement.marginal_rates)
        self.prev_period_incomes = settlement.taxable.copy()
        self.prev_period_marginal_rates = settlement.marginal_rates.copy()
        self.period_incomes = np.zeros(self.config.n_agents)
        info["settlement"] = settlement

    def _free_escrowed_coin(self, agent_id: int, needed: float):
        # Tax due exceeds loose coin: cancel open bids, oldest first, until
        # the inventory covers it. Total coin always suffices because the
        # tax never exceeds the period's (nonnegative) income.
        for order in sorted(self.book.agent_open_bids(agent_id), key=lambda o: o.sequence):
            if self.world.agents[agent_id].coin >= needed - 1e-12:
                break
            self.book.cancel(order, self.world)

    # -- masks ---------------------------------------------------------------------

    def _build_agent_masks(self) -> np.ndarray:
        cfg = self.config
        masks = np.zeros((cfg.n_agents, N_AGENT_ACTIONS), dtype=bool)
        masks[:, AGENT_NOOP] = True
        for i, agent in enumerate(self.world.agents):
            r, c = agent.position
            for d, name in enumerate(MOVE_ORDER):
                dr, dc = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}[name]
                masks[i, MOVE_BASE + d] = self.world.can_enter(i, r + dr, c + dc)
            masks[i, BUILD_ACTION] = self.world.can_build(i)
            if cfg.trading_enabled:
                for kind in ResourceKind:
                    cap_ok = self.book.open_count(i, kind) < MAX_OPEN_ORDERS
                    if not cap_ok:
                        continue
                    base = TRADE_BASE + int(kind) * N_PRICE_LEVELS
                    prices = np.arange(N_PRICE_LEVELS)
                    masks[i, base:base + N_PRICE_LEVELS] = prices <= agent.coin
                    ask_base = base + 2 * N_PRICE_LEVELS
                    if agent.resource_count(kind) >= 1:
                        masks[i, ask_base:ask_base + N_PRICE_LEVELS] = True
        return masks

    def _build_planner_masks(self) -> np.ndarray:
        masks = np.zeros((N_PLANNER_HEADS, PLANNER_ACTIONS_PER_HEAD), dtype=bool)
        masks[:, PLANNER_NOOP] = True
        if self.t % self.config.tax_period == 0 and self.t < self.config.episode_length:
            levels = np.arange(N_RATE_LEVELS) * RATE_STEP
            allowed = levels <= self.annealing_cap + 1e-9
            masks[:, 1:] = allowed
        return masks

    # -- observations ----------------------------------------------------------------

    def _init_obs_buffers(self):
        spec = self.obs_spec
        H, W = spec.world_shape
        half = spec.window // 2
        self._tensor = np.zeros((spec.n_channels, H, W), dtype=np.float32)
        self._tensor[0] = self.world.world_map.water
        self._tensor[1] = self.world.world_map.source_mask(ResourceKind.WOOD)
        self._tensor[2] = self.world.world_map.source_mask(ResourceKind.STONE)
        self._padded = np.zeros((spec.n_channels, H + 2 * half, W + 2 * half), dtype=np.float32)
        n = spec.n_agents
        self._channel_perm = []
        for i in range(n):
            agents = [5 + i] + [5 + j for j in range(n) if j != i]
            houses = [5 + n + i] + [5 + n + j for j in range(n) if j != i]
            self._channel_perm.append(np.array([0, 1, 2, 3, 4] + agents + houses))

    def _refresh_world_tensor(self):
        w = self.world
        n = self.config.n_agents
        self._tensor[3] = w.resource & (w.world_map.source == int(ResourceKind.WOOD))
        self._tensor[4] = w.resource & (w.world_map.source == int(ResourceKind.STONE))
        self._tensor[5:5 + n] = 0.0
        for i, agent in enumerate(w.agents):
            self._tensor[5 + i][agent.position] = 1.0
            self._tensor[5 + n + i] = w.houses == i
        half = self.obs_spec.window // 2
        H, W = self.obs_spec.world_shape
        self._padded[:, half:half + H, half:half + W] = self._tensor

    def _tax_observation_common(self) -> np.ndarray:
        cfg = self.config
        progress = np.array(
            [
                (self.t % cfg.tax_period) / cfg.tax_period,
                (self.t // cfg.tax_period) / cfg.n_periods,
            ]
        )
        return np.concatenate(
            [np.asarray(self.schedule.rates), progress,
             np.sort(self.prev_period_incomes) / COIN_SCALE]
        )

    def _observe(self, rewards, planner_reward, done, info) -> StepOutcome:
        cfg = self.config
        spec = self.obs_spec
        self._refresh_world_tensor()
        half = spec.window // 2

        agent_spatial = np.empty((cfg.n_agents, *spec.agent_spatial_shape), dtype=np.float32)
        agent_vector = np.empty((cfg.n_agents, spec.agent_vector_dim), dtype=np.float32)
        tax_common = self._tax_observation_common()
        for i, agent in enumerate(self.world.agents):
            r, c = agent.position
            agent_spatial[i] = self._padded[
                self._channel_perm[i], r:r + spec.window, c:c + spec.window
            ]
            view = market_observation(self.book, i)
            own_income = max(self.period_incomes[i], 0.0)
            agent_vector[i] = np.concatenate(
                [
                    [agent.wood, agent.stone, agent.coin / COIN_SCALE,
                     agent.escrow_wood, agent.escrow_stone, agent.escrow_coin / COIN_SCALE,
                     agent.building_skill, agent.collection_skill,
                     agent.labor / LABOR_SCALE],
                    view.bids_own.ravel(), view.asks_own.ravel(),
                    view.bids_other.ravel(), view.asks_other.ravel(),
                    view.avg_trade_price / COIN_SCALE,
                    view.trades_at_level.ravel() / TRADE_COUNT_SCALE,
                    [marginal_rate_at(own_income, self.schedule)],
                    tax_common,
                ]
            )

        planner_view = market_observation(self.book, None)
        per_agent_public = np.concatenate(
            [
                [a.wood, a.stone, a.coin / COIN_SCALE,
                 a.escrow_wood, a.escrow_stone, a.escrow_coin / COIN_SCALE]
                for a in self.world.agents
            ]
        )
        planner_vector = np.concatenate(
            [
                per_agent_public,
                planner_view.bids_other.ravel(), planner_view.asks_other.ravel(),
                planner_view.avg_trade_price / COIN_SCALE,
                planner_view.trades_at_level.ravel() / TRADE_COUNT_SCALE,
                tax_common,
                self.prev_period_incomes / COIN_SCALE,
                self.prev_period_marginal_rates,
            ]
        ).astype(np.float32)

        self._agent_masks = self._build_agent_masks()
        self._planner_masks = self._build_planner_masks()
        return StepOutcome(
            agent_spatial=agent_spatial,
            agent_vector=agent_vector,
            planner_spatial=self._tensor.copy(),
            planner_vector=planner_vector,
            agent_masks=self._agent_masks.copy(),
            planner_masks=self._planner_masks.copy(),
            rewards=np.asarray(rewards, dtype=float),
            planner_reward=float(planner_reward),
            done=done,
            info=info,
        )


def sample_masked_uniform(masks: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform random choice among permitted actions, one row at a time."""
    masks = np.atleast_2d(masks)
    out = np.empty(masks.shape[0], dtype=int)
    for i, row in enumerate(masks):
        choices = np.flatnonzero(row)
        out[i] = rng.choice(choices)
    return out
