"""Single-environment episode rollouts for evaluation, replay, and analysis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from . import metrics
from .env import Env, sample_masked_uniform
from .policy import act


@dataclass
class EpisodeStats:
    """Summary of one completed episode."""

    seed: int
    final_coins: np.ndarray
    final_utilities: np.ndarray
    final_labors: np.ndarray
    equality: float
    productivity: float
    eq_times_prod: float
    swf_weighted_inverse_income: float
    building_skills: np.ndarray
    pre_tax_incomes: np.ndarray        # (periods, N)
    taxes: np.ndarray                  # (periods, N)
    transfers: np.ndarray              # (periods,)
    rates: np.ndarray                  # (periods, B)
    total_rewards: np.ndarray
    planner_return: float


def _planner_input(env, obs, planner_model, planner_state, controller,
                   torch_generator, controller_rng):
    """Planner action/rates for the upcoming tick (rates only bind at period
    starts; the learned planner's hidden state advances every tick)."""
    if planner_model is not None:
        spatial = torch.from_numpy(obs.planner_spatial).unsqueeze(0)
        vector = torch.from_numpy(obs.planner_vector).unsqueeze(0)
        masks = torch.from_numpy(obs.planner_masks).unsqueeze(0)
        actions, _, _, planner_state = act(
            planner_model, spatial, vector, masks, planner_state, torch_generator
        )
        return actions[0].numpy(), None, planner_state
    if controller is not None and env.t % env.config.tax_period == 0:
        return None, controller.rates_at_period_start(controller_rng), planner_state
    return None, None, planner_state


def rollout_episode(
    env: Env,
    agent_model=None,
    planner_model=None,
    controller=None,
    seed: int = 0,
    recorder=None,
) -> EpisodeStats:
    """Play one full episode and summarize it.

    ``agent_model`` None plays the masked-uniform random policy. The planner
    side is either a learned model (sampling rate actions) or a controller
    (producing exact rates at period starts); with neither, rates stay zero.
    """
    obs = env.reset(seed)
    cfg = env.config
    policy_rng = np.random.default_rng(seed + 0x5EED)
    controller_rng = np.random.default_rng(seed + 0xC0FFEE)
    torch_generator = torch.Generator().manual_seed(seed)
    agent_state = agent_model.initial_state(cfg.n_agents) if agent_model else None
    planner_state = planner_model.initial_state(1) if planner_model else None

    if recorder is not None:
        recorder.start(env)

    total_rewards = np.zeros(cfg.n_agents)
    planner_return = 0.0
    while True:
        if agent_model is not None:
            spatial = torch.from_numpy(obs.agent_spatial)
            vector = torch.from_numpy(obs.agent_vector)
            masks = torch.from_numpy(obs.agent_masks).unsqueeze(1)
            actions_t, _, _, agent_state = act(
                agent_model, spatial, vector, masks, agent_state, torch_generator
            )
            agent_actions = actions_t[:, 0].numpy()
        else:
            agent_actions = sample_masked_uniform(obs.agent_masks, policy_rng)

        planner_action, planner_rates, planner_state = _planner_input(
            env, obs, planner_model, planner_state, controller,
            torch_generator, controller_rng,
        )
        obs = env.step(agent_actions, planner_action=planner_action,
                       planner_rates=planner_rates)
        total_rewards += obs.rewards
        planner_return += obs.planner_reward
        if recorder is not None:
            recorder.record_step(agent_actions, obs)
        if controller is not None and "settlement" in obs.info:
            controller.observe_settlement(obs.info["settlement"])
            controller.aggregate()
        if obs.done:
            break

    coins = env.world.coin_endowments()
    labors = env.world.labors()
    settles = env.ledger.settlements
    stats = EpisodeStats(
        seed=seed,
        final_coins=coins,
        final_utilities=env._utilities.copy(),
        final_labors=labors,
        equality=metrics.equality(coins),
        productivity=metrics.productivity(coins),
        eq_times_prod=metrics.swf_eq_times_prod(coins),
        swf_weighted_inverse_income=metrics.swf_weighted(
            np.maximum(coins, 0.0), labors, "inverse_income", cfg.utility_eta
        ),
        building_skills=np.array([a.building_skill for a in env.world.agents]),
        pre_tax_incomes=np.array([s.taxable for s in settles]),
        taxes=np.array([s.taxes for s in settles]),
        transfers=np.array([s.transfer for s in settles]),
        rates=np.array([s.rates for s in settles]),
        total_rewards=total_rewards,
        planner_return=planner_return,
    )
    if recorder is not None:
        recorder.finish(env, stats)
    return stats
