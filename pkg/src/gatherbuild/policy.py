"""Recurrent policy/value networks with action masking.

Both the shared agent policy and the planner policy use the same layout:
two strided convolutions over the spatial observation, flattened and
concatenated with the vector features, two fully connected layers, a
recurrent cell, and one linear logit head per action subspace plus a value
head. Policy and value are separate towers (no weight sharing). Action
heads are zero-initialized so the starting policy is uniform over permitted
actions. Masked logits are pushed to -1e9, which underflows to exactly zero
probability after the softmax, so masked actions are never sampled and
receive exactly zero gradient.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

MASK_FILL = -1e9


def _conv_out(n: int) -> int:
    # kernel 3, stride 2, padding 1
    return (n + 1) // 2


class _Tower(nn.Module):
    """conv x2 -> flatten -> concat vector -> fc x2 -> recurrent cell -> heads."""

    def __init__(self, spatial_shape, vector_dim, head_sizes, fc_dim, rnn_size,
                 conv_channels=(16, 32), rnn_cell="gru"):
        super().__init__()
        c, h, w = spatial_shape
        c1, c2 = conv_channels
        self.conv1 = nn.Conv2d(c, c1, kernel_size=3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(c1, c2, kernel_size=3, stride=2, padding=1)
        flat = c2 * _conv_out(_conv_out(h)) * _conv_out(_conv_out(w))
        self.fc1 = nn.Linear(flat + vector_dim, fc_dim)
        self.fc2 = nn.Linear(fc_dim, fc_dim)
        self.rnn_cell_kind = rnn_cell
        if rnn_cell == "gru":
            self.cell = nn.GRUCell(fc_dim, rnn_size)
            self.state_dim = rnn_size
        elif rnn_cell == "lstm":
            self.cell = nn.LSTMCell(fc_dim, rnn_size)
            self.state_dim = 2 * rnn_size
        else:
            raise ValueError(f"unknown rnn cell {rnn_cell!r}")
        self.rnn_size = rnn_size
        self.heads = nn.ModuleList([nn.Linear(rnn_size, n) for n in head_sizes])

    def trunk(self, spatial, vector):
        x = F.relu(self.conv1(spatial))
        x = F.relu(self.conv2(x))
        x = torch.cat([x.flatten(1), vector], dim=1)
        x = F.relu(self.fc1(x))
        return F.relu(self.fc2(x))

    def _cell_step(self, feat, state):
        if self.rnn_cell_kind == "gru":
            new = self.cell(feat, state)
            return new, new
        h, c = state[:, : self.rnn_size], state[:, self.rnn_size:]
        h, c = self.cell(feat, (h.contiguous(), c.contiguous()))
        return h, torch.cat([h, c], dim=1)

    def step(self, spatial, vector, state):
        feat = self.trunk(spatial, vector)
        out, new_state = self._cell_step(feat, state)
        return [head(out) for head in self.heads], new_state

    def sequence(self, spatial, vector, dones, state0):
        """Run a (B, T, ...) chunk; hidden state resets after done steps."""
        b, t = spatial.shape[:2]
        feats = self.trunk(
            spatial.reshape(b * t, *spatial.shape[2:]),
            vector.reshape(b * t, vector.shape[-1]),
        ).reshape(b, t, -1)
        state = state0
        outs = []
        for i in range(t):
            out, state = self._cell_step(feats[:, i], state)
            outs.append(out)
            if dones is not None:
                state = state * (1.0 - dones[:, i]).unsqueeze(1)
        outs = torch.stack(outs, dim=1)          # (B, T, rnn)
        flat = outs.reshape(b * t, -1)
        return [head(flat).reshape(b, t, -1) for head in self.heads], state


class RecurrentPolicy(nn.Module):
    """Separate policy and value towers sharing one recurrent state vector."""

    def __init__(self, spatial_shape, vector_dim, head_sizes, fc_dim=128,
                 rnn_size=128, conv_channels=(16, 32), rnn_cell="gru"):
        super().__init__()
        self.head_sizes = tuple(head_sizes)
        self.pi = _Tower(spatial_shape, vector_dim, head_sizes, fc_dim, rnn_size,
                         conv_channels, rnn_cell)
        self.v = _Tower(spatial_shape, vector_dim, [1], fc_dim, rnn_size,
                        conv_channels, rnn_cell)
        for head in self.pi.heads:
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)
        self.state_dim = self.pi.state_dim + self.v.state_dim

    def initial_state(self, batch: int, device=None) -> torch.Tensor:
        p = next(self.parameters())
        return torch.zeros(batch, self.state_dim, device=device or p.device, dtype=p.dtype)

    def _split(self, state):
        return state[:, : self.pi.state_dim], state[:, self.pi.state_dim:]

    def step(self, spatial, vector, state):
        ps, vs = self._split(state)
        logits, ps = self.pi.step(spatial, vector, ps)
        value, vs = self.v.step(spatial, vector, vs)
        return logits, value[0].squeeze(-1), torch.cat([ps, vs], dim=1)

    def sequence(self, spatial, vector, dones, state0):
        ps, vs = self._split(state0)
        logits, _ = self.pi.sequence(spatial, vector, dones, ps)
        values, _ = self.v.sequence(spatial, vector, dones, vs)
        return logits, values[0].squeeze(-1)


def masked_logits(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return logits.masked_fill(~mask, MASK_FILL)


def masked_entropy(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Shannon entropy over permitted actions (zero terms for masked ones)."""
    ml = masked_logits(logits, mask)
    logp = F.log_softmax(ml, dim=-1)
    p = logp.exp()
    return -(p * logp).sum(dim=-1)


def act(model: RecurrentPolicy, spatial, vector, masks, state, generator=None):
    """Sample one action per head for a batch of actors.

    masks: (B, n_heads_or_1, A) bool. Returns (actions (B, H) long,
    log-prob (B,), value (B,), new state). No gradients are tracked.
    """
    with torch.no_grad():
        logits_list, value, new_state = model.step(spatial, vector, state)
        actions, logps = [], []
        for h, logits in enumerate(logits_list):
            ml = masked_logits(logits, masks[:, h, : logits.shape[-1]])
            logp_all = F.log_softmax(ml, dim=-1)
            a = torch.multinomial(logp_all.exp(), 1, generator=generator)
            actions.append(a.squeeze(-1))
            logps.append(logp_all.gather(1, a).squeeze(-1))
        return (
            torch.stack(actions, dim=1),
            torch.stack(logps, dim=1).sum(dim=1),
            value,
            new_state,
        )


def evaluate_sequences(model: RecurrentPolicy, spatial, vector, masks, actions,
                       dones, state0):
    """Recompute log-probs, entropies, and values for stored chunks.

    Shapes: spatial (B, T, C, h, w), vector (B, T, D), masks
    (B, T, H, A), actions (B, T, H), dones (B, T). Entropy is summed over
    heads (the joint distribution factorizes).
    """
    logits_list, values = model.sequence(spatial, vector, dones, state0)
    logp = 0.0
    entropy = 0.0
    for h, logits in enumerate(logits_list):
        ml = masked_logits(logits, masks[:, :, h, : logits.shape[-1]])
        logp_all = F.log_softmax(ml, dim=-1)
        logp = logp + logp_all.gather(-1, actions[:, :, h:h + 1].long()).squeeze(-1)
        p = logp_all.exp()
        entropy = entropy - (p * logp_all).sum(dim=-1)
    return logp, entropy, values
