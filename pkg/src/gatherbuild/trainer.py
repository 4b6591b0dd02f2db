"""Two-level PPO training: shared agent policy plus (optionally) the planner.

Training follows the inner-outer scheme: many environment replicas are
sampled in lockstep for a fixed horizon with the current parameters, then
the agent policy (and, for the learned treatment, the planner policy) take
several clipped-PPO updates on that horizon, chunked into fixed-length
subsequences with stored initial hidden states. Phase one trains agents
under zero taxes; phase two resumes with a tax treatment active, annealing
the planner's maximum rate from 10% to 100%.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .controllers import make_controller
from .env import (
    Env,
    EpisodeConfig,
    N_AGENT_ACTIONS,
    N_PLANNER_HEADS,
    PLANNER_ACTIONS_PER_HEAD,
)
from .policy import RecurrentPolicy, act
from .ppo import (
    DivergenceError,
    PpoSettings,
    SequenceBatch,
    gae_advantages,
    ppo_update,
)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Learning hyperparameters. Defaults mirror the reference settings;
    sample budgets default to a desk scale roughly 100x below them."""

    algorithm: str = "ppo"
    n_replicas: int = 60
    sampling_horizon: int = 200
    minibatch_size: int = 3000
    sequence_length: int = 50
    updates_per_horizon_agent: int = 16
    updates_per_horizon_planner: int = 4
    lr_agent: float = 3e-4
    lr_planner: float = 1e-4
    entropy_coef_agent: float = 0.025
    entropy_coef_planner: float = 0.1
    gamma: float = 0.998
    gae_lambda: float = 0.98
    grad_clip: float = 10.0
    value_loss_coef: float = 0.05
    ppo_clip: float = 0.2
    phase_one_samples: int = 500_000
    phase_two_samples: int = 4_000_000
    anneal_cap_start: float = 0.10
    anneal_samples: int = 540_000
    fc_dim_agent: int = 128
    fc_dim_planner: int = 256
    rnn_size_agent: int = 128
    rnn_size_planner: int = 256
    conv_channels: tuple = (16, 32)
    rnn_cell: str = "gru"
    patience_iterations: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "conv_channels" in d:
            d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d)

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


def annealing_cap(samples_into_phase: int, cfg: TrainConfig) -> float:
    """Maximum marginal rate the planner may set: linear from the starting
    cap to 100% over the configured sample budget."""
    if cfg.anneal_samples <= 0:
        return 1.0
    frac = min(samples_into_phase / cfg.anneal_samples, 1.0)
    return cfg.anneal_cap_start + (1.0 - cfg.anneal_cap_start) * frac


def build_agent_model(episode_config: EpisodeConfig, cfg: TrainConfig) -> RecurrentPolicy:
    spec = Env(episode_config, seed=0).obs_spec
    return RecurrentPolicy(
        spec.agent_spatial_shape, spec.agent_vector_dim, [N_AGENT_ACTIONS],
        fc_dim=cfg.fc_dim_agent, rnn_size=cfg.rnn_size_agent,
        conv_channels=cfg.conv_channels, rnn_cell=cfg.rnn_cell,
    )


def build_planner_model(episode_config: EpisodeConfig, cfg: TrainConfig) -> RecurrentPolicy:
    spec = Env(episode_config, seed=0).obs_spec
    return RecurrentPolicy(
        spec.planner_spatial_shape, spec.planner_vector_dim,
        [PLANNER_ACTIONS_PER_HEAD] * N_PLANNER_HEADS,
        fc_dim=cfg.fc_dim_planner, rnn_size=cfg.rnn_size_planner,
        conv_channels=cfg.conv_channels, rnn_cell=cfg.rnn_cell,
    )


def save_checkpoint(path, agent_model, planner_model, episode_config, train_config,
                    samples: int, treatment: str):
    payload = {
        "version": CHECKPOINT_VERSION,
        "agent_state": agent_model.state_dict(),
        "planner_state": planner_model.state_dict() if planner_model else None,
        "episode_config": episode_config.to_dict(),
        "train_config": train_config.to_dict(),
        "config_hash": episode_config.config_hash(),
        "samples": samples,
        "treatment": treatment,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    episode_config = EpisodeConfig.from_dict(payload["episode_config"])
    train_config = TrainConfig.from_dict(payload["train_config"])
    agent = build_agent_model(episode_config, train_config)
    agent.load_state_dict(payload["agent_state"])
    planner = None
    if payload["planner_state"] is not None:
        planner = build_planner_model(episode_config, train_config)
        planner.load_state_dict(payload["planner_state"])
    return agent, planner, episode_config, train_config, payload


class _Storage:
    """Per-horizon transition storage for one actor family."""

    def __init__(self, t, n_actors, spatial_shape, vector_dim, n_heads, head_size, state_dim, seq_len):
        self.spatial = np.zeros((t, n_actors, *spatial_shape), dtype=np.uint8)
        self.vector = np.zeros((t, n_actors, vector_dim), dtype=np.float32)
        self.masks = np.zeros((t, n_actors, n_heads, head_size), dtype=bool)
        self.actions = np.zeros((t, n_actors, n_heads), dtype=np.int16)
        self.logp = np.zeros((t, n_actors), dtype=np.float32)
        self.value = np.zeros((t, n_actors), dtype=np.float32)
        self.reward = np.zeros((t, n_actors), dtype=np.float32)
        self.done = np.zeros((t, n_actors), dtype=np.float32)
        self.state0 = np.zeros((t // seq_len, n_actors, state_dim), dtype=np.float32)
        self.seq_len = seq_len

    def minibatches(self, advantages, returns, rng, n_updates, batch_transitions):
        """Yield SequenceBatch minibatches of (actor, chunk) units."""
        t, a = self.logp.shape
        k = t // self.seq_len

        def unitize(arr, dtype=None):
            arr = arr.reshape(k, self.seq_len, a, *arr.shape[2:])
            arr = np.ascontiguousarray(arr.swapaxes(0, 2).swapaxes(1, 2))
            # now (a, k, L, ...) -> units (a*k, L, ...)
            return arr.reshape(a * k, self.seq_len, *arr.shape[3:])

        spatial = unitize(self.spatial)
        vector = unitize(self.vector)
        masks = unitize(self.masks)
        actions = unitize(self.actions)
        logp = unitize(self.logp)
        adv = unitize(advantages.astype(np.float32))
        rets = unitize(returns.astype(np.float32))
        dones = unitize(self.done)
        state0 = np.ascontiguousarray(self.state0.swapaxes(0, 1)).reshape(a * k, -1)

        units_per_batch = max(1, batch_transitions // self.seq_len)
        order = rng.permutation(a * k)
        cursor = 0
        for _ in range(n_updates):
            if cursor + units_per_batch > len(order):
                order = rng.permutation(a * k)
                cursor = 0
            idx = order[cursor:cursor + units_per_batch]
            cursor += units_per_batch
            yield SequenceBatch(
                spatial=torch.from_numpy(spatial[idx]).float(),
                vector=torch.from_numpy(vector[idx]),
                masks=torch.from_numpy(masks[idx]),
                actions=torch.from_numpy(actions[idx]),
                old_logp=torch.from_numpy(logp[idx]),
                advantages=torch.from_numpy(adv[idx]),
                returns=torch.from_numpy(rets[idx]),
                dones=torch.from_numpy(dones[idx]),
                state0=torch.from_numpy(state0[idx]),
            )


class Trainer:
    """Synchronous sampler + PPO updater over parallel environment replicas."""

    def __init__(self, episode_config: EpisodeConfig, train_config: TrainConfig,
                 treatment: str = "free", seed: int = 0,
                 agent_model: RecurrentPolicy | None = None,
                 planner_model: RecurrentPolicy | None = None,
                 camelback_rates=None, metrics_path=None):
        self.episode_config = episode_config
        self.cfg = train_config
        self.treatment = treatment
        self.seed = seed
        self.metrics_path = metrics_path
        torch.manual_seed(seed)
        self.torch_generator = torch.Generator().manual_seed(seed * 7919 + 1)
        self.np_rng = np.random.default_rng(seed * 104729 + 2)

        r = train_config.n_replicas
        self.envs = [Env(episode_config, seed=self._episode_seed(i, 0)) for i in range(r)]
        self.obs_spec = self.envs[0].obs_spec
        self._episode_index = [0] * r
        self._controller_rngs = [np.random.default_rng(seed * 31 + 1000 + i) for i in range(r)]

        self.agent_model = agent_model or build_agent_model(episode_config, train_config)
        self.learn_planner = treatment == "learned"
        if self.learn_planner:
            self.planner_model = planner_model or build_planner_model(episode_config, train_config)
        else:
            self.planner_model = None
        self.controller = None if self.learn_planner else make_controller(
            treatment, episode_config.bracket_cutoffs, camelback_rates=camelback_rates
        )

        self.agent_opt = torch.optim.Adam(self.agent_model.parameters(), lr=train_config.lr_agent)
        self.planner_opt = (
            torch.optim.Adam(self.planner_model.parameters(), lr=train_config.lr_planner)
            if self.learn_planner else None
        )
        self.samples = 0
        self.iteration = 0
        self.metrics_history: list[dict] = []
        self._episode_stats: list[dict] = []

        n, s = episode_config.n_agents, self.agent_model.state_dim
        self.agent_state = torch.zeros(r * n, s)
        if self.learn_planner:
            self.planner_state = torch.zeros(r, self.planner_model.state_dim)
        self._last_obs = [env.reset() for env in self.envs]

    # -- plumbing ---------------------------------------------------------------

    def _episode_seed(self, replica: int, episode: int) -> int:
        return (self.seed * 1_000_003 + episode * 613 + replica) % (2**31 - 1)

    def _stack_agent_obs(self):
        spatial = np.stack([o.agent_spatial for o in self._last_obs])
        vector = np.stack([o.agent_vector for o in self._last_obs])
        masks = np.stack([o.agent_masks for o in self._last_obs])
        rn = spatial.shape[0] * spatial.shape[1]
        return (
            spatial.reshape(rn, *spatial.shape[2:]),
            vector.reshape(rn, -1),
            masks.reshape(rn, 1, N_AGENT_ACTIONS),
        )

    def _stack_planner_obs(self):
        spatial = np.stack([o.planner_spatial for o in self._last_obs])
        vector = np.stack([o.planner_vector for o in self._last_obs])
        masks = np.stack([o.planner_masks for o in self._last_obs])
        return spatial, vector, masks

    def set_annealing_cap(self, cap: float):
        for env in self.envs:
            env.annealing_cap = cap

    # -- sampling -----------------------------------------------------------------

    def sample_horizon(self):
        cfg = self.cfg
        ecfg = self.episode_config
        r, n = cfg.n_replicas, ecfg.n_agents
        t_len, seq = cfg.sampling_horizon, cfg.sequence_length
        spec = self.obs_spec

        agents = _Storage(t_len, r * n, spec.agent_spatial_shape, spec.agent_vector_dim,
                          1, N_AGENT_ACTIONS, self.agent_model.state_dim, seq)
        planner = None
        if self.learn_planner:
            planner = _Storage(t_len, r, spec.planner_spatial_shape, spec.planner_vector_dim,
                               N_PLANNER_HEADS, PLANNER_ACTIONS_PER_HEAD,
                               self.planner_model.state_dim, seq)

        for t in range(t_len):
            if t % seq == 0:
                agents.state0[t // seq] = self.agent_state.numpy()
                if planner is not None:
                    planner.state0[t // seq] = self.planner_state.numpy()

            a_spatial, a_vector, a_masks = self._stack_agent_obs()
            actions_t, logp_t, value_t, self.agent_state = act(
                self.agent_model,
                torch.from_numpy(a_spatial), torch.from_numpy(a_vector),
                torch.from_numpy(a_masks), self.agent_state, self.torch_generator,
            )
            agents.spatial[t] = a_spatial
            agents.vector[t] = a_vector
            agents.masks[t] = a_masks
            agents.actions[t] = actions_t.numpy()
            agents.logp[t] = logp_t.numpy()
            agents.value[t] = value_t.numpy()
            agent_actions = actions_t[:, 0].numpy().reshape(r, n)

            planner_actions = None
            if self.learn_planner:
                p_spatial, p_vector, p_masks = self._stack_planner_obs()
                p_actions, p_logp, p_value, self.planner_state = act(
                    self.planner_model,
                    torch.from_numpy(p_spatial), torch.from_numpy(p_vector),
                    torch.from_numpy(p_masks), self.planner_state, self.torch_generator,
                )
                planner.spatial[t] = p_spatial
                planner.vector[t] = p_vector
                planner.masks[t] = p_masks
                planner.actions[t] = p_actions.numpy()
                planner.logp[t] = p_logp.numpy()
                planner.value[t] = p_value.numpy()
                planner_actions = p_actions.numpy()

            for i, env in enumerate(self.envs):
                rates = None
                if self.controller is not None and env.t % ecfg.tax_period == 0:
                    rates = self.controller.rates_at_period_start(self._controller_rngs[i])
                outcome = env.step(
                    agent_actions[i],
                    planner_action=planner_actions[i] if planner_actions is not None else None,
                    planner_rates=rates,
                )
                agents.reward[t, i * n:(i + 1) * n] = outcome.rewards
                if planner is not None:
                    planner.reward[t, i] = outcome.planner_reward
                if self.controller is not None and "settlement" in outcome.info:
                    self.controller.observe_settlement(outcome.info["settlement"])
                if outcome.done:
                    self._finish_episode(i, outcome)
                    agents.done[t, i * n:(i + 1) * n] = 1.0
                    if planner is not None:
                        planner.done[t, i] = 1.0
                else:
                    self._last_obs[i] = outcome

        self.samples += r * t_len
        if self.controller is not None:
            self.controller.aggregate()
        return agents, planner

    def _finish_episode(self, replica: int, outcome):
        env = self.envs[replica]
        coins = env.world.coin_endowments()
        self._episode_stats.append(
            {
                "utility": float(env._utilities.mean()),
                "equality": metrics.equality(coins),
                "productivity": metrics.productivity(coins),
                "eq_times_prod": metrics.swf_eq_times_prod(coins),
            }
        )
        self._episode_index[replica] += 1
        seed = self._episode_seed(replica, self._episode_index[replica])
        self._last_obs[replica] = env.reset(seed)
        n = self.episode_config.n_agents
        self.agent_state[replica * n:(replica + 1) * n] = 0.0
        if self.learn_planner:
            self.planner_state[replica] = 0.0

    # -- updates --------------------------------------------------------------------

    def _bootstrap_values(self):
        a_spatial, a_vector, _ = self._stack_agent_obs()
        with torch.no_grad():
            _, agent_v, _ = self.agent_model.step(
                torch.from_numpy(a_spatial), torch.from_numpy(a_vector), self.agent_state
            )
            planner_v = None
            if self.learn_planner:
                p_spatial, p_vector, _ = self._stack_planner_obs()
                _, planner_v, _ = self.planner_model.step(
                    torch.from_numpy(p_spatial).float(), torch.from_numpy(p_vector),
                    self.planner_state,
                )
        return agent_v.numpy(), None if planner_v is None else planner_v.numpy()

    def train_iteration(self) -> dict:
        cfg = self.cfg
        t0 = time.perf_counter()
        agents, planner = self.sample_horizon()
        agent_boot, planner_boot = self._bootstrap_values()

        adv, rets = gae_advantages(
            agents.reward, agents.value, agents.done, agent_boot, cfg.gamma, cfg.gae_lambda
        )
        agent_settings = PpoSettings(
            clip=cfg.ppo_clip, value_loss_coef=cfg.value_loss_coef,
            entropy_coef=cfg.entropy_coef_agent, grad_clip=cfg.grad_clip,
        )
        diag = ppo_update(
            self.agent_model, self.agent_opt,
            agents.minibatches(adv, rets, self.np_rng, cfg.updates_per_horizon_agent,
                               cfg.minibatch_size),
            agent_settings,
        )
        row = {f"agent_{k}": v for k, v in diag.items()}

        if planner is not None:
            p_adv, p_rets = gae_advantages(
                planner.reward, planner.value, planner.done, planner_boot,
                cfg.gamma, cfg.gae_lambda,
            )
            planner_settings = PpoSettings(
                clip=cfg.ppo_clip, value_loss_coef=cfg.value_loss_coef,
                entropy_coef=cfg.entropy_coef_planner, grad_clip=cfg.grad_clip,
            )
            p_diag = ppo_update(
                self.planner_model, self.planner_opt,
                planner.minibatches(p_adv, p_rets, self.np_rng,
                                    cfg.updates_per_horizon_planner, cfg.minibatch_size),
                planner_settings,
            )
            row.update({f"planner_{k}": v for k, v in p_diag.items()})

        self.iteration += 1
        row.update(iteration=self.iteration, samples=self.samples,
                   seconds=time.perf_counter() - t0)
        if self._episode_stats:
            for key in ("utility", "equality", "productivity", "eq_times_prod"):
                row[f"episode_{key}"] = float(
                    np.mean([s[key] for s in self._episode_stats])
                )
            row["episodes"] = len(self._episode_stats)
            self._episode_stats.clear()
        self.metrics_history.append(row)
        return row

    def train_phase(self, sample_budget: int, anneal: bool = False,
                    log_every: int = 1, progress=None) -> list[dict]:
        """Run iterations until ``sample_budget`` additional samples are drawn.

        Optionally anneals the planner's rate cap over the phase; stops early
        when the configured patience sees no eq_times_prod/utility improvement
        or when an update diverges (reported in the returned history).
        """
        start = self.samples
        best = -np.inf
        stale = 0
        rows = []
        while self.samples - start < sample_budget:
            cap = annealing_cap(self.samples - start, self.cfg) if anneal else 1.0
            self.set_annealing_cap(cap)
            try:
                row = self.train_iteration()
            except DivergenceError as err:
                row = {"iteration": self.iteration + 1, "samples": self.samples,
                       "diverged": str(err)}
                self.metrics_history.append(row)
                rows.append(row)
                break
            row["annealing_cap"] = cap
            rows.append(row)
            if progress is not None and (self.iteration % log_every == 0):
                progress(row)
            score = row.get("episode_eq_times_prod", row.get("episode_utility"))
            if self.cfg.patience_iterations is not None and score is not None:
                if score > best + 1e-9:
                    best, stale = score, 0
                else:
                    stale += 1
                    if stale >= self.cfg.patience_iterations:
                        break
        if self.metrics_path:
            write_metrics_csv(self.metrics_path, self.metrics_history)
        return rows


METRIC_COLUMNS = [
    "iteration", "samples", "seconds", "annealing_cap", "episodes",
    "episode_utility", "episode_equality", "episode_productivity",
    "episode_eq_times_prod",
    "agent_policy_loss", "agent_value_loss", "agent_entropy",
    "planner_policy_loss", "planner_value_loss", "planner_entropy",
    "diverged",
]


def write_metrics_csv(path, history: list[dict]):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in history:
            writer.writerow({k: row.get(k, "") for k in METRIC_COLUMNS})


def train(
    episode_config: EpisodeConfig,
    train_config: TrainConfig,
    treatment: str,
    out_dir,
    seed: int = 0,
    phase_one_checkpoint=None,
    camelback_rates=None,
    progress=None,
) -> dict:
    """Full two-phase run: free-market pretraining, then the treatment.

    With ``phase_one_checkpoint`` given, phase one is skipped and its agent
    weights are reused (one phase-one model per seed, shared across
    treatments). Returns checkpoint paths and the metrics history.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if phase_one_checkpoint is None:
        phase1 = Trainer(episode_config, train_config, treatment="free", seed=seed,
                         metrics_path=out / "phase1_metrics.csv")
        phase1.train_phase(train_config.phase_one_samples, anneal=False, progress=progress)
        agent_model = phase1.agent_model
        phase_one_checkpoint = out / "phase1.ckpt"
        save_checkpoint(phase_one_checkpoint, agent_model, None, episode_config,
                        train_config, phase1.samples, "free")
        phase1_history = phase1.metrics_history
    else:
        agent_model, _, _, _, _ = load_checkpoint(phase_one_checkpoint)
        phase1_history = []

    phase2 = Trainer(episode_config, train_config, treatment=treatment,
                     seed=seed + 1, agent_model=agent_model,
                     camelback_rates=camelback_rates,
                     metrics_path=out / f"phase2_{treatment}_metrics.csv")
    phase2.train_phase(train_config.phase_two_samples,
                       anneal=(treatment == "learned"), progress=progress)
    final_path = out / f"{treatment}.ckpt"
    save_checkpoint(final_path, phase2.agent_model, phase2.planner_model,
                    episode_config, train_config, phase2.samples, treatment)
    return {
        "phase_one_checkpoint": str(phase_one_checkpoint),
        "checkpoint": str(final_path),
        "phase1_history": phase1_history,
        "phase2_history": phase2.metrics_history,
    }
