import numpy as np
import pytest

from conftest import identity_layer, make_random_stack
from sepsiq.errors import ConsistencyError, DimensionError, NumericError
from sepsiq.mlp import (
    Activation,
    DenseLayer,
    Gradients,
    adam_step,
    backward,
    forward,
    init_adam_state,
    init_layer,
)


class TestForward:
    def test_single_identity_layer_is_linear_map(self):
        layer = identity_layer([[2.0]])
        cache = forward([layer], [[3.0]])
        np.testing.assert_array_equal(cache.output, [[6.0]])

    def test_empty_batch_gives_empty_output(self, rng):
        layers = make_random_stack(rng, (4, 5, 3))
        cache = forward(layers, np.zeros((0, 4)))
        assert cache.output.shape == (0, 3)

    def test_leaky_relu_negative_side(self):
        layer = DenseLayer(np.array([[1.0]]), np.zeros(1), Activation.LEAKY_RELU)
        cache = forward([layer], [[-1.0]])
        np.testing.assert_allclose(cache.output, [[-0.01]])

    def test_shape_mismatch_names_layer(self, rng):
        layers = make_random_stack(rng, (4, 5, 3))
        with pytest.raises(DimensionError, match="layer 0"):
            forward(layers, np.zeros((2, 7)))

    def test_inputs_not_mutated(self, rng):
        layers = make_random_stack(rng, (3, 4, 2))
        x = rng.standard_normal((5, 3))
        before = x.copy()
        forward(layers, x)
        np.testing.assert_array_equal(x, before)

    def test_deterministic(self, rng):
        layers = make_random_stack(rng, (3, 8, 2))
        x = rng.standard_normal((6, 3))
        a = forward(layers, x).output
        b = forward(layers, x).output
        np.testing.assert_array_equal(a, b)


class TestBackward:
    def test_product_rule_scalar(self):
        layer = identity_layer([[2.0]])
        cache = forward([layer], [[3.0]])
        grads, input_grad = backward([layer], cache, [[1.0]])
        np.testing.assert_array_equal(grads.weights[0], [[3.0]])
        np.testing.assert_array_equal(grads.biases[0], [1.0])
        np.testing.assert_array_equal(input_grad, [[2.0]])

    def test_zero_output_gradient_gives_zero_grads(self, rng):
        layers = make_random_stack(rng, (4, 6, 3))
        x = rng.standard_normal((5, 4))
        cache = forward(layers, x)
        grads, input_grad = backward(layers, cache, np.zeros((5, 3)))
        for w, b in zip(grads.weights, grads.biases):
            assert not w.any() and not b.any()
        assert not input_grad.any()

    def test_mismatched_cache_rejected(self, rng):
        layers = make_random_stack(rng, (4, 6, 3))
        cache = forward(layers, rng.standard_normal((5, 4)))
        with pytest.raises(ConsistencyError):
            backward(layers[:1], cache, np.zeros((5, 3)))
        with pytest.raises(ConsistencyError):
            backward(layers, cache, np.zeros((2, 3)))

    def test_matches_central_finite_differences(self, rng):
        # Independent oracle: perturb every parameter by +-h and compare the
        # analytic gradient of a random linear functional of the output.
        step = 1e-5
        for trial in range(5):
            layers, x, projection = _sample_safe_case(rng, trial)
            cache = forward(layers, x)
            grads, _ = backward(layers, cache, projection)

            def loss(stack):
                return float((forward(stack, x).output * projection).sum())

            for li, layer in enumerate(layers):
                for arr_name, grad_arr in (("weights", grads.weights[li]), ("biases", grads.biases[li])):
                    base = getattr(layer, arr_name)
                    it = np.nditer(base, flags=["multi_index"])
                    for _ in it:
                        idx = it.multi_index
                        numeric = _central_difference(layers, li, arr_name, idx, step, loss)
                        analytic = grad_arr[idx]
                        if abs(analytic) > 1e-8 or abs(numeric) > 1e-8:
                            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric))
                            assert rel < 1e-4, (li, arr_name, idx, analytic, numeric)


def _sample_safe_case(rng, trial):
    """Random 3-layer net whose pre-activations stay away from the kink."""
    widths = [(5, 8, 6, 4), (3, 7, 5, 2), (4, 4, 4, 4), (6, 10, 8, 3), (2, 16, 9, 5)][trial]
    while True:
        layers = make_random_stack(rng, widths)
        x = rng.standard_normal((4, widths[0]))
        cache = forward(layers, x)
        closest = min(np.abs(z).min() for z in cache.pre_activations)
        if closest > 1e-3:
            projection = rng.standard_normal(cache.output.shape)
            return layers, x, projection


def _central_difference(layers, li, arr_name, idx, step, loss):
    def shifted(delta):
        stack = [l.copy() for l in layers]
        getattr(stack[li], arr_name)[idx] += delta
        return loss(stack)

    return (shifted(step) - shifted(-step)) / (2 * step)


class TestAdam:
    def _zero_grads(self, layers):
        return Gradients(
            weights=[np.zeros_like(l.weights) for l in layers],
            biases=[np.zeros_like(l.biases) for l in layers],
        )

    def test_zero_gradient_leaves_params(self, rng):
        layers = make_random_stack(rng, (3, 4, 2))
        state = init_adam_state(layers)
        new_layers, new_state = adam_step(layers, self._zero_grads(layers), state, 0.1)
        assert new_state.step == 1
        for old, new in zip(layers, new_layers):
            np.testing.assert_array_equal(old.weights, new.weights)
            np.testing.assert_array_equal(old.biases, new.biases)

    def test_first_step_moves_by_lr(self):
        layer = identity_layer([[1.0]])
        state = init_adam_state([layer])
        grads = Gradients(weights=[np.array([[1.0]])], biases=[np.zeros(1)])
        new_layers, _ = adam_step([layer], grads, state, 0.1)
        # bias-corrected first step is -lr * g / (|g| + eps)
        np.testing.assert_allclose(new_layers[0].weights, [[0.9]], atol=1e-8)

    def test_identical_calls_identical_results(self, rng):
        layers = make_random_stack(rng, (3, 5, 2))
        grads = Gradients(
            weights=[rng.standard_normal(l.weights.shape) for l in layers],
            biases=[rng.standard_normal(l.biases.shape) for l in layers],
        )
        state = init_adam_state(layers)
        out1, st1 = adam_step(layers, grads, state, 1e-3)
        out2, st2 = adam_step(layers, grads, state, 1e-3)
        assert st1.step == st2.step == 1
        for a, b in zip(out1, out2):
            np.testing.assert_array_equal(a.weights, b.weights)
            np.testing.assert_array_equal(a.biases, b.biases)

    def test_nonfinite_gradient_rejected(self, rng):
        layers = make_random_stack(rng, (3, 4, 2))
        grads = self._zero_grads(layers)
        grads.weights[0][0, 0] = np.nan
        with pytest.raises(NumericError):
            adam_step(layers, grads, init_adam_state(layers), 1e-3)

    def test_shape_mismatch_rejected(self, rng):
        layers = make_random_stack(rng, (3, 4, 2))
        grads = self._zero_grads(layers)
        grads.weights[0] = np.zeros((1, 1))
        with pytest.raises(DimensionError):
            adam_step(layers, grads, init_adam_state(layers), 1e-3)


class TestInit:
    def test_he_uniform_bounds_and_zero_bias(self, rng):
        layer = init_layer(50, 30, Activation.LEAKY_RELU, rng)
        limit = np.sqrt(6.0 / 50)
        assert np.all(np.abs(layer.weights) <= limit)
        assert not layer.biases.any()

    def test_seeded_init_reproducible(self):
        a = init_layer(4, 3, Activation.IDENTITY, np.random.default_rng(7))
        b = init_layer(4, 3, Activation.IDENTITY, np.random.default_rng(7))
        np.testing.assert_array_equal(a.weights, b.weights)
