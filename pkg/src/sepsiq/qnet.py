"""Dueling Q-network over the clinical state, with Double-DQN targets.

Q(s, a) = V(s) + A(s, a) - mean_a' A(s, a'), so the mean Q over actions
equals V exactly. Action selection in the bootstrap target uses the online
net; the action's value comes from the frozen target copy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigError, DimensionError
from .mlp import (
    Activation,
    DenseLayer,
    ForwardCache,
    Gradients,
    as_matrix,
    backward,
    forward,
    init_layer,
)

if TYPE_CHECKING:  # pragma: no cover
    from .data import TransitionBatch

STATE_DIM = 48
HIDDEN_WIDTHS = (128, 128)
N_ACTIONS = 25


@dataclass
class DuelingQNet:
    """Shared trunk feeding a scalar value head and a per-action advantage head."""

    trunk: list
    value_head: DenseLayer
    advantage_head: DenseLayer

    @property
    def state_dim(self) -> int:
        return self.trunk[0].fan_in

    @property
    def n_actions(self) -> int:
        return self.advantage_head.fan_out

    def layers(self) -> list:
        """Canonical parameter order: trunk layers, value head, advantage head."""
        return [*self.trunk, self.value_head, self.advantage_head]

    def copy(self) -> "DuelingQNet":
        return DuelingQNet(
            trunk=[layer.copy() for layer in self.trunk],
            value_head=self.value_head.copy(),
            advantage_head=self.advantage_head.copy(),
        )


def build_qnet(
    rng: np.random.Generator,
    state_dim: int = STATE_DIM,
    hidden_widths: tuple = HIDDEN_WIDTHS,
    n_actions: int = N_ACTIONS,
) -> DuelingQNet:
    """Freshly initialized network; layer init order is fixed for seeding."""
    trunk = []
    fan_in = state_dim
    for width in hidden_widths:
        trunk.append(init_layer(fan_in, width, Activation.LEAKY_RELU, rng))
        fan_in = width
    value_head = init_layer(fan_in, 1, Activation.IDENTITY, rng)
    advantage_head = init_layer(fan_in, n_actions, Activation.IDENTITY, rng)
    return DuelingQNet(trunk=trunk, value_head=value_head, advantage_head=advantage_head)


def net_from_layers(layers: list) -> DuelingQNet:
    """Rebuild a net from its canonical layer list (see ``layers()``)."""
    if len(layers) < 3:
        raise DimensionError("need at least one trunk layer plus two heads")
    return DuelingQNet(
        trunk=list(layers[:-2]), value_head=layers[-2], advantage_head=layers[-1]
    )


@dataclass
class DuelingCache:
    """Forward intermediates for one batch, consumed by ``backward_dueling``."""

    trunk: ForwardCache
    value: ForwardCache
    advantage: ForwardCache
    q: np.ndarray


def forward_dueling(net: DuelingQNet, states) -> DuelingCache:
    x = as_matrix(states, "states")
    if x.shape[1] != net.state_dim:
        raise DimensionError(
            f"states must have width {net.state_dim}, got {x.shape[1]}"
        )
    trunk_cache = forward(net.trunk, x)
    value_cache = forward([net.value_head], trunk_cache.output)
    advantage_cache = forward([net.advantage_head], trunk_cache.output)
    advantages = advantage_cache.output
    q = value_cache.output + advantages - advantages.mean(axis=1, keepdims=True)
    return DuelingCache(trunk_cache, value_cache, advantage_cache, q)


def q_values(net: DuelingQNet, states) -> np.ndarray:
    """Q-row per state: shape (batch, n_actions)."""
    return forward_dueling(net, states).q


def backward_dueling(
    net: DuelingQNet, cache: DuelingCache, q_gradient
) -> Gradients:
    """Gradients of a scalar loss given dL/dQ, in canonical layer order."""
    dq = as_matrix(q_gradient, "q_gradient")
    # Q_j = V + A_j - mean(A): dV collects everything, dA is mean-centered.
    dv = dq.sum(axis=1, keepdims=True)
    da = dq - dq.mean(axis=1, keepdims=True)
    value_grads, value_input_grad = backward([net.value_head], cache.value, dv)
    adv_grads, adv_input_grad = backward([net.advantage_head], cache.advantage, da)
    trunk_grads, _ = backward(net.trunk, cache.trunk, value_input_grad + adv_input_grad)
    return Gradients(
        weights=[*trunk_grads.weights, *value_grads.weights, *adv_grads.weights],
        biases=[*trunk_grads.biases, *value_grads.biases, *adv_grads.biases],
    )


def greedy_actions(net: DuelingQNet, states) -> np.ndarray:
    """Argmax action per state; ties break toward the lowest index."""
    return np.argmax(q_values(net, states), axis=1)


def greedy_action(net: DuelingQNet, state) -> int:
    state = np.asarray(state, dtype=np.float64)
    if state.ndim == 1:
        state = state[None, :]
    return int(greedy_actions(net, state)[0])


@dataclass
class TargetNet:
    """Frozen copy of a DuelingQNet plus a sync-generation counter."""

    net: DuelingQNet
    generation: int = 0


def make_target(net: DuelingQNet) -> TargetNet:
    return TargetNet(net=net.copy(), generation=0)


def sync_target(net: DuelingQNet, target: TargetNet) -> TargetNet:
    """Hard parameter copy; bumps the generation counter by one."""
    return TargetNet(net=net.copy(), generation=target.generation + 1)


def double_dqn_target(
    net: DuelingQNet,
    target: TargetNet,
    batch: "TransitionBatch",
    gamma: float,
) -> np.ndarray:
    """Per-transition TD target: r for terminals, else r + gamma * Q_target(s', a*).

    a* is the online net's greedy action at s'; its value is read from the
    target net. The result is a constant with respect to the online
    parameters (no gradient flows through it).
    """
    if not 0.0 <= gamma < 1.0:
        raise ConfigError(f"gamma must be in [0, 1), got {gamma}")
    next_q_online = q_values(net, batch.next_states)
    best = np.argmax(next_q_online, axis=1)
    next_q_target = q_values(target.net, batch.next_states)
    bootstrap = next_q_target[np.arange(len(best)), best]
    rewards = np.asarray(batch.rewards, dtype=np.float64)
    terminals = np.asarray(batch.terminals, dtype=bool)
    return np.where(terminals, rewards, rewards + gamma * bootstrap)
