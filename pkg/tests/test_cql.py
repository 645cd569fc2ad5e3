import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_random_stack
from sepsiq.cql import (
    cql_penalty,
    cql_penalty_gradient,
    logsumexp,
    loss_given_targets,
    total_loss,
)
from sepsiq.data import TransitionBatch
from sepsiq.errors import DomainError
from sepsiq.mlp import DenseLayer
from sepsiq.qnet import DuelingQNet, build_qnet, make_target, q_values

finite_rows = st.lists(
    st.floats(min_value=-100.0, max_value=100.0, allow_nan=False), min_size=1, max_size=30
)


class TestLogsumexp:
    def test_25_zeros_is_log_25(self):
        assert logsumexp(np.zeros(25)) == pytest.approx(math.log(25.0), abs=1e-12)

    def test_single_spike(self):
        row = np.zeros(25)
        row[0] = 10.0
        expected = 10.0 + math.log1p(24.0 * math.exp(-10.0))
        assert logsumexp(row) == pytest.approx(expected, abs=1e-12)
        assert logsumexp(row) == pytest.approx(10.001090, abs=1e-6)

    @given(values=finite_rows, shift=st.floats(min_value=-50, max_value=50, allow_nan=False))
    @settings(max_examples=60, deadline=None)
    def test_shift_identity(self, values, shift):
        row = np.array(values)
        assert logsumexp(row + shift) == pytest.approx(logsumexp(row) + shift, abs=1e-9)

    @given(values=finite_rows)
    @settings(max_examples=60, deadline=None)
    def test_lower_bounded_by_max(self, values):
        row = np.array(values)
        assert logsumexp(row) >= row.max()

    def test_huge_magnitudes_stay_finite(self):
        for peak in (1e300, -1e300):
            row = np.full(25, -1.0)
            row[3] = peak
            assert np.isfinite(logsumexp(row))

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            logsumexp(np.array([]))

    def test_nonfinite_rejected(self):
        with pytest.raises(DomainError):
            logsumexp(np.array([1.0, np.inf]))


class TestCqlPenalty:
    def test_flat_row_gives_log_25(self):
        row = np.full(25, 3.7)
        for action in (0, 13, 24):
            assert cql_penalty(row, action) == pytest.approx(math.log(25.0), abs=1e-12)

    def test_spiked_row_at_spike(self):
        row = np.zeros(25)
        row[7] = 10.0
        assert cql_penalty(row, 7) == pytest.approx(0.001090, abs=1e-6)

    @given(values=st.lists(st.floats(-50, 50), min_size=2, max_size=25), shift=st.floats(-50, 50))
    @settings(max_examples=60, deadline=None)
    def test_shift_invariant(self, values, shift):
        row = np.array(values)
        action = len(values) // 2
        assert cql_penalty(row + shift, action) == pytest.approx(
            cql_penalty(row, action), abs=1e-9
        )

    @given(values=st.lists(st.floats(-50, 50), min_size=2, max_size=25))
    @settings(max_examples=60, deadline=None)
    def test_strictly_positive(self, values):
        row = np.array(values)
        assert cql_penalty(row, 0) > 0.0

    def test_bad_action_rejected(self):
        with pytest.raises(DomainError):
            cql_penalty(np.zeros(25), 25)
        with pytest.raises(DomainError):
            cql_penalty(np.zeros(25), -1)

    def test_gradient_is_softmax_minus_onehot(self, rng):
        row = rng.standard_normal(25) * 3
        action = 11
        grad = cql_penalty_gradient(row, action)
        softmax = np.exp(row - row.max())
        softmax /= softmax.sum()
        expected = softmax.copy()
        expected[action] -= 1.0
        np.testing.assert_allclose(grad, expected, atol=1e-12)
        assert grad.sum() == pytest.approx(0.0, abs=1e-12)


def random_batch(rng, net, size=6, terminal_share=0.3):
    states = rng.standard_normal((size, net.state_dim))
    next_states = rng.standard_normal((size, net.state_dim))
    return TransitionBatch(
        indices=np.arange(size),
        states=states,
        action_indices=rng.integers(0, net.n_actions, size=size),
        rewards=rng.standard_normal(size) * 4,
        next_states=next_states,
        terminals=rng.random(size) < terminal_share,
    )


def small_net(rng, state_dim=5, hidden=(7, 6), n_actions=4):
    return build_qnet(rng, state_dim=state_dim, hidden_widths=hidden, n_actions=n_actions)


class TestTotalLoss:
    def test_alpha_zero_recovers_bellman(self, rng):
        net = small_net(rng)
        target = make_target(small_net(rng))
        batch = random_batch(rng, net)
        breakdown, _ = total_loss(net, target, batch, gamma=0.97, alpha=0.0)
        assert breakdown.total == breakdown.bellman_loss
        assert breakdown.cql_penalty_mean > 0.0

    def test_breakdown_identity(self, rng):
        net = small_net(rng)
        target = make_target(small_net(rng))
        batch = random_batch(rng, net)
        breakdown, _ = total_loss(net, target, batch, gamma=0.9, alpha=0.37)
        assert breakdown.total == pytest.approx(
            0.37 * breakdown.cql_penalty_mean + breakdown.bellman_loss, rel=1e-15
        )

    def test_alpha_monotone_at_fixed_parameters(self, rng):
        net = small_net(rng)
        target = make_target(small_net(rng))
        batch = random_batch(rng, net)
        totals = [
            total_loss(net, target, batch, gamma=0.9, alpha=a)[0].total
            for a in (0.0, 0.05, 0.1, 0.5, 2.0)
        ]
        assert all(b >= a for a, b in zip(totals, totals[1:]))

    def test_perfect_fit_zero_loss_zero_grads(self, rng):
        # A net whose Q-values are identically zero fits targets that are
        # all zero: gamma=0 and zero rewards.
        net = small_net(rng)
        for head in (net.value_head, net.advantage_head):
            head.weights[:] = 0.0
            head.biases[:] = 0.0
        target = make_target(net)
        batch = random_batch(rng, net)
        batch.rewards[:] = 0.0
        breakdown, grads = total_loss(net, target, batch, gamma=0.0, alpha=0.0)
        assert breakdown.total == 0.0
        for w, b in zip(grads.weights[-2:], grads.biases[-2:]):
            np.testing.assert_array_equal(w, np.zeros_like(w))
            np.testing.assert_array_equal(b, np.zeros_like(b))

    def test_empty_batch_rejected(self, rng):
        net = small_net(rng)
        target = make_target(net)
        batch = random_batch(rng, net, size=6)
        empty = TransitionBatch(
            indices=np.arange(0),
            states=np.zeros((0, net.state_dim)),
            action_indices=np.zeros(0, dtype=np.int64),
            rewards=np.zeros(0),
            next_states=np.zeros((0, net.state_dim)),
            terminals=np.zeros(0, dtype=bool),
        )
        del batch
        with pytest.raises(DomainError):
            total_loss(net, target, empty, gamma=0.9, alpha=0.1)

    def test_negative_alpha_rejected(self, rng):
        net = small_net(rng)
        target = make_target(net)
        batch = random_batch(rng, net)
        with pytest.raises(DomainError):
            total_loss(net, target, batch, gamma=0.9, alpha=-0.1)

    def test_gradient_matches_finite_differences(self, rng):
        # Oracle: central differences of the loss with the TD targets frozen
        # at their base-point values, matching the semi-gradient contract.
        from sepsiq.qnet import double_dqn_target

        step = 1e-5
        for _ in range(3):
            net, batch = _safe_loss_case(rng)
            target = make_target(small_net(rng, state_dim=4, hidden=(5, 4), n_actions=3))
            y = double_dqn_target(net, target, batch, gamma=0.95)
            breakdown, grads = loss_given_targets(
                net, batch.states, batch.action_indices, y, alpha=0.1
            )

            def loss_at(layers):
                from sepsiq.qnet import net_from_layers

                candidate = net_from_layers(layers)
                b, _ = loss_given_targets(
                    candidate, batch.states, batch.action_indices, y, alpha=0.1
                )
                return b.total

            layers = net.layers()
            for li in range(len(layers)):
                for arr_name, grad_arr in (
                    ("weights", grads.weights[li]),
                    ("biases", grads.biases[li]),
                ):
                    base = getattr(layers[li], arr_name)
                    flat_indices = list(np.ndindex(base.shape))
                    for idx in flat_indices:
                        numeric = _fd(layers, li, arr_name, idx, step, loss_at)
                        analytic = grad_arr[idx]
                        if max(abs(analytic), abs(numeric)) > 1e-8:
                            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric))
                            assert rel < 1e-4, (li, arr_name, idx, analytic, numeric)


def _safe_loss_case(rng):
    while True:
        net = small_net(rng, state_dim=4, hidden=(5, 4), n_actions=3)
        batch = random_batch(rng, net, size=4)
        from sepsiq.qnet import forward_dueling

        cache = forward_dueling(net, batch.states)
        closest = min(np.abs(z).min() for z in cache.trunk.pre_activations)
        if closest > 1e-3:
            return net, batch


def _fd(layers, li, arr_name, idx, step, loss_at):
    def shifted(delta):
        stack = [l.copy() for l in layers]
        getattr(stack[li], arr_name)[idx] += delta
        return loss_at(stack)

    return (shifted(step) - shifted(-step)) / (2 * step)
