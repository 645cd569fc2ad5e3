"""Conservative regularizer and the assembled training loss.

The objective is ``alpha * mean_s[logsumexp_a Q(s, a) - Q(s, a_data)]``
plus the mean squared Double-DQN Bellman error. The penalty pushes down
whichever Q-value is largest at each state while holding up the action the
data actually took, so out-of-distribution actions cannot keep inflated
values. TD targets are treated as constants (semi-gradient).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import DomainError, NumericError
from .mlp import Gradients
from .qnet import DuelingQNet, TargetNet, backward_dueling, double_dqn_target, forward_dueling

if TYPE_CHECKING:  # pragma: no cover
    from .data import TransitionBatch


def logsumexp(values) -> float:
    """Max-shifted log(sum(exp(v))); stable for entries up to ~1e300.

    The peak term is peeled off and the remainder goes through ``log1p``,
    so the result stays strictly above the max whenever any other term
    survives underflow.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DomainError("logsumexp needs a non-empty 1-D array")
    if not np.all(np.isfinite(v)):
        raise DomainError("logsumexp inputs must be finite")
    return float(_logsumexp_rows(v[None, :])[0])


def _logsumexp_rows(q: np.ndarray) -> np.ndarray:
    peak_idx = np.argmax(q, axis=1)
    rows = np.arange(q.shape[0])
    peak = q[rows, peak_idx]
    rest = np.exp(q - peak[:, None])
    rest[rows, peak_idx] = 0.0
    return peak + np.log1p(rest.sum(axis=1))


def _softmax_rows(q: np.ndarray) -> np.ndarray:
    shifted = q - q.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cql_penalty(q_row, data_action: int) -> float:
    """logsumexp(Q) - Q[data_action]; strictly positive for >= 2 actions.

    Computed as ``(max - Q[a]) + log1p(rest)`` so the positivity survives
    even when the data action holds the maximum by a wide margin.
    """
    v = np.asarray(q_row, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DomainError("cql_penalty needs a non-empty 1-D array")
    if not np.all(np.isfinite(v)):
        raise DomainError("cql_penalty inputs must be finite")
    if not 0 <= data_action < v.size:
        raise DomainError(
            f"data_action must be in 0..{v.size - 1}, got {data_action}"
        )
    peak_idx = int(np.argmax(v))
    rest = np.exp(v - v[peak_idx])
    rest[peak_idx] = 0.0
    return float((v[peak_idx] - v[data_action]) + np.log1p(rest.sum()))


def cql_penalty_gradient(q_row, data_action: int) -> np.ndarray:
    """d(penalty)/dQ = softmax(Q) - onehot(data_action); sums to 0."""
    v = np.asarray(q_row, dtype=np.float64)
    if not 0 <= data_action < v.size:
        raise DomainError(
            f"data_action must be in 0..{v.size - 1}, got {data_action}"
        )
    grad = _softmax_rows(v[None, :])[0].copy()
    grad[data_action] -= 1.0
    return grad


@dataclass(frozen=True)
class LossBreakdown:
    """The assembled objective: total = alpha * cql_penalty_mean + bellman_loss."""

    cql_penalty_mean: float
    bellman_loss: float
    total: float
    alpha: float


def loss_given_targets(
    net: DuelingQNet,
    states,
    action_indices,
    targets,
    alpha: float,
) -> tuple:
    """Loss and exact gradients with the TD targets held fixed.

    Splitting this from :func:`total_loss` keeps the differentiated function
    explicit: the bootstrap values are data here, not functions of the
    parameters.
    """
    if alpha < 0.0:
        raise DomainError(f"alpha must be non-negative, got {alpha}")
    actions = np.asarray(action_indices, dtype=np.int64)
    y = np.asarray(targets, dtype=np.float64)
    batch_size = actions.size
    if batch_size == 0:
        raise DomainError("loss is undefined on an empty batch")

    cache = forward_dueling(net, states)
    q = cache.q
    if np.any(actions < 0) or np.any(actions >= q.shape[1]):
        raise DomainError("action index out of range for this network")
    rows = np.arange(batch_size)
    q_data = q[rows, actions]

    td = q_data - y
    bellman = float(np.mean(td * td))
    lse = _logsumexp_rows(q)
    penalty_mean = float(np.mean(lse - q_data))
    total = alpha * penalty_mean + bellman
    if not np.isfinite(total):
        raise NumericError("loss is non-finite")

    # d/dQ of the per-sample mean: softmax weights from the logsumexp term,
    # minus alpha at the data action, plus the squared-error term.
    dq = alpha * np.exp(q - lse[:, None])
    dq[rows, actions] += 2.0 * td - alpha
    dq /= batch_size

    grads = backward_dueling(net, cache, dq)
    breakdown = LossBreakdown(
        cql_penalty_mean=penalty_mean, bellman_loss=bellman, total=total, alpha=alpha
    )
    return breakdown, grads


def total_loss(
    net: DuelingQNet,
    target: TargetNet,
    batch: "TransitionBatch",
    gamma: float,
    alpha: float,
) -> tuple:
    """Eq-style objective on one minibatch: conservative penalty + TD error.

    Returns the loss breakdown and gradients w.r.t. every parameter of
    ``net`` in canonical layer order.
    """
    if len(batch) == 0:
        raise DomainError("loss is undefined on an empty batch")
    y = double_dqn_target(net, target, batch, gamma)
    return loss_given_targets(net, batch.states, batch.action_indices, y, alpha)
