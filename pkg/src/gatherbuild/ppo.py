"""Generalized advantage estimation and the clipped PPO update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .policy import RecurrentPolicy, evaluate_sequences


class DivergenceError(RuntimeError):
    """Raised when an update produces a non-finite loss."""


def gae_advantages(rewards, values, dones, bootstrap_value, gamma, lam):
    """Standard generalized-advantage recursion over a sampled horizon.

    Inputs are (T, B) arrays; ``bootstrap_value`` (B,) is the value estimate
    of the state after the final transition (ignored where that transition
    ended the episode). Returns (advantages, returns) with
    returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    t_len = rewards.shape[0]
    adv = np.zeros_like(rewards)
    carry = np.zeros(rewards.shape[1], dtype=np.float64)
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    for t in reversed(range(t_len)):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        carry = delta + gamma * lam * nonterminal * carry
        adv[t] = carry
        next_value = values[t]
    return adv, adv + values


@dataclass
class PpoSettings:
    clip: float = 0.2
    value_loss_coef: float = 0.05
    entropy_coef: float = 0.025
    grad_clip: float = 10.0
    # Off by default: standardizing advantages rescales the dense per-tick
    # labor costs to unit variance in minibatches that contain no sparse
    # build payoffs, which pushes policies into a no-op attractor at small
    # sample budgets. Raw advantages + gradient clipping behave correctly.
    normalize_advantages: bool = False


@dataclass
class SequenceBatch:
    """One minibatch of fixed-length chunks with stored initial hidden states."""

    spatial: torch.Tensor      # (B, T, C, h, w)
    vector: torch.Tensor       # (B, T, D)
    masks: torch.Tensor        # (B, T, H, A) bool
    actions: torch.Tensor      # (B, T, H)
    old_logp: torch.Tensor     # (B, T)
    advantages: torch.Tensor   # (B, T)
    returns: torch.Tensor      # (B, T)
    dones: torch.Tensor        # (B, T)
    state0: torch.Tensor       # (B, S)


def ppo_loss(model: RecurrentPolicy, batch: SequenceBatch, cfg: PpoSettings):
    """Clipped surrogate + value error + entropy bonus for one minibatch."""
    logp, entropy, values = evaluate_sequences(
        model, batch.spatial, batch.vector, batch.masks, batch.actions,
        batch.dones, batch.state0,
    )
    adv = batch.advantages
    if cfg.normalize_advantages:
        std = adv.std()
        if std > 1e-8:
            adv = (adv - adv.mean()) / std
    ratio = torch.exp(logp - batch.old_logp)
    surr1 = ratio * adv
    surr2 = torch.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
    policy_loss = -torch.min(surr1, surr2).mean()
    value_loss = ((values - batch.returns) ** 2).mean()
    mean_entropy = entropy.mean()
    loss = policy_loss + cfg.value_loss_coef * value_loss - cfg.entropy_coef * mean_entropy
    diagnostics = {
        "policy_loss": float(policy_loss.detach()),
        "value_loss": float(value_loss.detach()),
        "entropy": float(mean_entropy.detach()),
    }
    return loss, diagnostics


def ppo_update(model: RecurrentPolicy, optimizer, minibatches, cfg: PpoSettings):
    """One gradient step per minibatch; returns averaged diagnostics."""
    agg: dict[str, float] = {}
    n = 0
    for batch in minibatches:
        loss, diag = ppo_loss(model, batch, cfg)
        if not torch.isfinite(loss):
            raise DivergenceError(f"non-finite loss: {diag}")
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        optimizer.step()
        n += 1
        for k, v in diag.items():
            agg[k] = agg.get(k, 0.0) + v
    return {k: v / max(n, 1) for k, v in agg.items()}
