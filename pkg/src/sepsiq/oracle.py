"""Exact tabular solver and brute-force checks on small enumerable MDPs.

Grounds the learner: value iteration gives Q* to solver tolerance,
exhaustive policy enumeration re-derives it independently, and
``q_table_from_net`` reads a trained network back out over one-hot-encoded
tabular states so the exact same forward path used in production gets
compared against ground truth.

Conventions: entering a terminal state ends the episode (its continuation
value is zero); rows of the returned Q-table for terminal states equal the
immediate reward.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clinical import N_FEATURES
from .data import NormStats, OfflineDataset
from .errors import ConfigError, DomainError, EncodingError, NumericError, SchemaError
from .qnet import DuelingQNet, q_values

_ROW_SUM_TOL = 1e-12


@dataclass
class TabularMDP:
    """Dense finite MDP: P[s, a, s'], R[s, a], terminal flags, gamma."""

    transitions: np.ndarray
    rewards: np.ndarray
    terminal: np.ndarray
    gamma: float

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        n, m = self.rewards.shape
        if self.transitions.shape != (n, m, n):
            raise DomainError(
                f"transition tensor must be {(n, m, n)}, got {self.transitions.shape}"
            )
        if self.terminal.shape != (n,):
            raise DomainError(f"terminal flags must have shape ({n},)")
        if not np.all(np.isfinite(self.rewards)):
            raise DomainError("rewards must be finite")
        if np.any(self.transitions < 0):
            raise DomainError("transition probabilities must be non-negative")
        row_sums = self.transitions.sum(axis=2)
        if np.any(np.abs(row_sums - 1.0) > _ROW_SUM_TOL):
            worst = float(np.abs(row_sums - 1.0).max())
            raise DomainError(f"transition rows must sum to 1 (worst error {worst:.3e})")

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]


def save_mdp(path, mdp: TabularMDP) -> None:
    """Text fixture format: header line, terminal flags, R rows, P rows."""
    lines = [
        f"{mdp.n_states} {mdp.n_actions} {repr(float(mdp.gamma))}",
        " ".join("1" if t else "0" for t in mdp.terminal),
    ]
    for s in range(mdp.n_states):
        lines.append(" ".join(repr(float(v)) for v in mdp.rewards[s]))
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            lines.append(" ".join(repr(float(v)) for v in mdp.transitions[s, a]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_mdp(path) -> TabularMDP:
    raw_lines = Path(path).read_text(encoding="utf-8").splitlines()
    lines = [l.strip() for l in raw_lines if l.strip() and not l.strip().startswith("#")]
    if not lines:
        raise SchemaError(f"{path}: empty fixture")
    try:
        head = lines[0].split()
        n, m, gamma = int(head[0]), int(head[1]), float(head[2])
        expected = 2 + n + n * m
        if len(lines) != expected:
            raise SchemaError(
                f"{path}: expected {expected} content lines for a {n}x{m} MDP, "
                f"got {len(lines)}"
            )
        terminal = np.array([flag == "1" for flag in lines[1].split()], dtype=bool)
        rewards = np.array([[float(v) for v in lines[2 + s].split()] for s in range(n)])
        transitions = np.zeros((n, m, n))
        for s in range(n):
            for a in range(m):
                row = [float(v) for v in lines[2 + n + s * m + a].split()]
                transitions[s, a] = row
    except (ValueError, IndexError) as exc:
        raise SchemaError(f"{path}: malformed fixture ({exc})") from None
    return TabularMDP(transitions=transitions, rewards=rewards, terminal=terminal, gamma=gamma)


def _bellman_backup(mdp: TabularMDP, q: np.ndarray) -> np.ndarray:
    value = np.where(mdp.terminal, 0.0, q.max(axis=1))
    backed = mdp.rewards + mdp.gamma * np.einsum("san,n->sa", mdp.transitions, value)
    backed[mdp.terminal, :] = mdp.rewards[mdp.terminal, :]
    return backed


def value_iteration(mdp: TabularMDP, tolerance: float = 1e-10, max_iters: int = 1_000_000) -> np.ndarray:
    """Q* with sup-norm Bellman residual below ``tolerance``.

    Starts from the pessimistic constant min(R)/(1 - gamma), from which the
    backup iterates are monotonically non-decreasing.
    """
    if not 0.0 <= mdp.gamma < 1.0:
        raise ConfigError(f"gamma must be in [0, 1) for value iteration, got {mdp.gamma}")
    if tolerance <= 0.0:
        raise ConfigError("tolerance must be positive")
    q = np.full(
        (mdp.n_states, mdp.n_actions), mdp.rewards.min() / (1.0 - mdp.gamma)
    )
    q[mdp.terminal, :] = mdp.rewards[mdp.terminal, :]
    for _ in range(max_iters):
        backed = _bellman_backup(mdp, q)
        if np.abs(backed - q).max() < tolerance:
            return backed
        q = backed
    raise NumericError(
        f"value iteration did not reach tolerance {tolerance} in {max_iters} iterations"
    )


def brute_force_q(mdp: TabularMDP, max_policies: int = 200_000) -> np.ndarray:
    """Q* via exhaustive policy enumeration with exact policy evaluation.

    Independent of value iteration: every deterministic stationary policy
    is evaluated by a linear solve and the table is the elementwise max.
    """
    n, m = mdp.n_states, mdp.n_actions
    n_policies = m**n
    if n_policies > max_policies:
        raise DomainError(f"{n_policies} policies exceed the enumeration cap {max_policies}")
    nonterminal = ~mdp.terminal
    nt_idx = np.flatnonzero(nonterminal)
    best_value = np.full(n, -np.inf)
    best_value[mdp.terminal] = 0.0  # continuation value of a terminal state

    for flat in range(n_policies):
        policy = np.empty(n, dtype=np.int64)
        rem = flat
        for s in range(n):
            policy[s] = rem % m
            rem //= m
        if nt_idx.size:
            p_pi = mdp.transitions[nt_idx, policy[nt_idx], :]
            r_pi = mdp.rewards[nt_idx, policy[nt_idx]]
            a = np.eye(nt_idx.size) - mdp.gamma * p_pi[:, nt_idx]
            v_nt = np.linalg.solve(a, r_pi)
            value = np.zeros(n)
            value[nt_idx] = v_nt
            best_value[nt_idx] = np.maximum(best_value[nt_idx], v_nt)
        del policy

    continuation = np.where(mdp.terminal, 0.0, best_value)
    q = mdp.rewards + mdp.gamma * np.einsum("san,n->sa", mdp.transitions, continuation)
    q[mdp.terminal, :] = mdp.rewards[mdp.terminal, :]
    return q


def encode_states(n_states: int) -> np.ndarray:
    """One-hot rows padded to the 48-feature input width; injective."""
    if n_states > N_FEATURES:
        raise EncodingError(
            f"cannot one-hot encode {n_states} states into {N_FEATURES} features"
        )
    if n_states < 1:
        raise DomainError("need at least one state")
    encoded = np.zeros((n_states, N_FEATURES))
    encoded[np.arange(n_states), np.arange(n_states)] = 1.0
    return encoded


def q_table_from_net(
    net: DuelingQNet, n_states: int, norm_stats: NormStats | None = None
) -> np.ndarray:
    """Read the network's Q-table over one-hot states (normalized if given)."""
    states = encode_states(n_states)
    if norm_stats is not None:
        states = norm_stats.transform(states)
    return q_values(net, states)


def rollout_dataset(
    mdp: TabularMDP,
    n_transitions: int,
    seed: int,
    episode_len: int = 50,
    omit_action: int | None = None,
) -> OfflineDataset:
    """Offline dataset of uniform-random behavior on the MDP.

    Transitions are chunked into pseudo-patients of ``episode_len`` steps so
    patient-level splitting works; ``omit_action`` drops one action from the
    behavior policy to create an out-of-distribution action.
    """
    if n_transitions < 1:
        raise DomainError("need at least one transition")
    allowed = [a for a in range(mdp.n_actions) if a != omit_action]
    if not allowed:
        raise DomainError("cannot omit the only action")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    encoded = encode_states(mdp.n_states)

    states = np.zeros((n_transitions, N_FEATURES))
    next_states = np.zeros((n_transitions, N_FEATURES))
    patient_ids = np.zeros(n_transitions, dtype=np.int64)
    timesteps = np.zeros(n_transitions, dtype=np.int64)
    actions = np.zeros(n_transitions, dtype=np.int64)
    rewards = np.zeros(n_transitions)
    terminals = np.zeros(n_transitions, dtype=bool)

    pid = 0
    pos = 0
    state = int(rng.integers(mdp.n_states))
    for i in range(n_transitions):
        action = allowed[int(rng.integers(len(allowed)))]
        nxt = int(rng.choice(mdp.n_states, p=mdp.transitions[state, action]))
        is_terminal = bool(mdp.terminal[nxt])
        states[i] = encoded[state]
        next_states[i] = encoded[nxt]
        patient_ids[i] = pid
        timesteps[i] = pos
        actions[i] = action
        rewards[i] = mdp.rewards[state, action]
        terminals[i] = is_terminal
        pos += 1
        if is_terminal or pos == episode_len:
            pid += 1
            pos = 0
            state = int(rng.integers(mdp.n_states))
        else:
            state = nxt

    zeros = np.zeros(n_transitions)
    return OfflineDataset(
        patient_ids=patient_ids,
        timesteps=timesteps,
        states=states,
        action_indices=actions,
        raw_iv_doses=zeros.copy(),
        raw_vp_doses=zeros.copy(),
        rewards=rewards,
        next_states=next_states,
        terminals=terminals,
        sofas=zeros.copy(),
        lactates=zeros.copy(),
        died=np.zeros(n_transitions, dtype=bool),
    )
