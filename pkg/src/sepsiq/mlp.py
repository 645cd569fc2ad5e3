"""Dense layers with hand-derived backpropagation and Adam updates.

Everything is float64 and functional: ``forward``/``backward``/``adam_step``
never mutate their arguments, so repeated calls from identical inputs give
bit-identical results. A "matrix" here is a plain 2-D float64 ndarray in
row-major layout; batches are stacked along axis 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConsistencyError, DimensionError, NumericError

# 2-D float64 ndarray, row-major.
Matrix = np.ndarray

LEAKY_RELU_SLOPE = 0.01


class Activation(Enum):
    LEAKY_RELU = "leaky_relu"
    IDENTITY = "identity"


def as_matrix(values, name: str = "input") -> Matrix:
    """Coerce to a finite 2-D float64 array, raising on bad shape/values."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


@dataclass
class DenseLayer:
    """One affine map plus elementwise activation. Weights are (out, in)."""

    weights: Matrix
    biases: np.ndarray
    activation: Activation

    def __post_init__(self):
        self.weights = as_matrix(self.weights, "weights")
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.biases.ndim != 1 or self.biases.shape[0] != self.weights.shape[0]:
            raise DimensionError(
                f"bias length {self.biases.shape} does not match "
                f"{self.weights.shape[0]} output rows"
            )

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.biases.copy(), self.activation)


def init_layer(
    fan_in: int, fan_out: int, activation: Activation, rng: np.random.Generator
) -> DenseLayer:
    """He-uniform weights scaled by fan-in; zero biases."""
    limit = np.sqrt(6.0 / fan_in)
    weights = rng.uniform(-limit, limit, size=(fan_out, fan_in))
    return DenseLayer(weights, np.zeros(fan_out), activation)


def _activate(activation: Activation, z: Matrix) -> Matrix:
    if activation is Activation.LEAKY_RELU:
        return np.where(z > 0.0, z, LEAKY_RELU_SLOPE * z)
    return z


def _activation_slope(activation: Activation, z: Matrix) -> Matrix:
    # Slope at exactly 0 follows the negative branch; forward agrees there.
    if activation is Activation.LEAKY_RELU:
        return np.where(z > 0.0, 1.0, LEAKY_RELU_SLOPE)
    return np.ones_like(z)


@dataclass
class ForwardCache:
    """Intermediates from one forward pass, consumed by :func:`backward`.

    ``inputs[i]`` is what layer i saw; ``pre_activations[i]`` is its affine
    output before the nonlinearity.
    """

    inputs: list
    pre_activations: list
    output: Matrix


def forward(layers: Sequence[DenseLayer], batch) -> ForwardCache:
    """Run a batch through a layer stack, keeping what backprop needs."""
    x = as_matrix(batch)
    inputs, pre_activations = [], []
    for i, layer in enumerate(layers):
        if x.shape[1] != layer.fan_in:
            raise DimensionError(
                f"layer {i}: expected input width {layer.fan_in}, got {x.shape[1]}"
            )
        z = x @ layer.weights.T + layer.biases
        if not np.all(np.isfinite(z)):
            raise NumericError(f"layer {i}: non-finite pre-activation")
        inputs.append(x)
        pre_activations.append(z)
        x = _activate(layer.activation, z)
    return ForwardCache(inputs=inputs, pre_activations=pre_activations, output=x)


@dataclass
class Gradients:
    """Per-layer weight/bias gradients, shapes mirroring the layer stack."""

    weights: list
    biases: list

    def __len__(self) -> int:
        return len(self.weights)


def backward(
    layers: Sequence[DenseLayer], cache: ForwardCache, output_gradient
) -> tuple[Gradients, Matrix]:
    """Exact reverse-mode gradients for the stack that produced ``cache``.

    ``output_gradient`` is dL/d(output); returns per-layer parameter
    gradients plus dL/d(input).
    """
    n = len(layers)
    if len(cache.inputs) != n or len(cache.pre_activations) != n:
        raise ConsistencyError(
            f"cache holds {len(cache.inputs)} layers, stack has {n}"
        )
    grad = as_matrix(output_gradient, "output_gradient")
    if grad.shape != cache.output.shape:
        raise ConsistencyError(
            f"output_gradient shape {grad.shape} does not match cached output "
            f"{cache.output.shape}"
        )
    weight_grads = [None] * n
    bias_grads = [None] * n
    for i in reversed(range(n)):
        layer = layers[i]
        z = cache.pre_activations[i]
        x = cache.inputs[i]
        if z.shape != (x.shape[0], layer.fan_out) or x.shape[1] != layer.fan_in:
            raise ConsistencyError(f"layer {i}: cache shapes do not match layer")
        dz = grad * _activation_slope(layer.activation, z)
        weight_grads[i] = dz.T @ x
        bias_grads[i] = dz.sum(axis=0)
        grad = dz @ layer.weights
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite input gradient")
    return Gradients(weights=weight_grads, biases=bias_grads), grad


@dataclass
class AdamState:
    """First/second-moment accumulators, one pair per layer parameter."""

    m_weights: list
    v_weights: list
    m_biases: list
    v_biases: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_adam_state(
    layers: Sequence[DenseLayer],
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    return AdamState(
        m_weights=[np.zeros_like(l.weights) for l in layers],
        v_weights=[np.zeros_like(l.weights) for l in layers],
        m_biases=[np.zeros_like(l.biases) for l in layers],
        v_biases=[np.zeros_like(l.biases) for l in layers],
        step=0,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(
    layers: Sequence[DenseLayer],
    grads: Gradients,
    state: AdamState,
    learning_rate: float,
) -> tuple[list, AdamState]:
    """One bias-corrected Adam update. Returns new layers and new state."""
    n = len(layers)
    if len(grads) != n or len(state.m_weights) != n:
        raise DimensionError(
            f"layer count mismatch: {n} layers, {len(grads)} gradients, "
            f"{len(state.m_weights)} optimizer slots"
        )
    for i, layer in enumerate(layers):
        if grads.weights[i].shape != layer.weights.shape or grads.biases[
            i
        ].shape != layer.biases.shape:
            raise DimensionError(f"layer {i}: gradient shape mismatch")
        if not (
            np.all(np.isfinite(grads.weights[i]))
            and np.all(np.isfinite(grads.biases[i]))
        ):
            raise NumericError(f"layer {i}: non-finite gradient entry")

    t = state.step + 1
    corr1 = 1.0 - state.beta1**t
    corr2 = 1.0 - state.beta2**t

    def update(param, grad, m, v):
        m_new = state.beta1 * m + (1.0 - state.beta1) * grad
        v_new = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        step_dir = (m_new / corr1) / (np.sqrt(v_new / corr2) + state.epsilon)
        return param - learning_rate * step_dir, m_new, v_new

    new_layers = []
    m_w, v_w, m_b, v_b = [], [], [], []
    for i, layer in enumerate(layers):
        w, mw, vw = update(
            layer.weights, grads.weights[i], state.m_weights[i], state.v_weights[i]
        )
        b, mb, vb = update(
            layer.biases, grads.biases[i], state.m_biases[i], state.v_biases[i]
        )
        new_layers.append(DenseLayer(w, b, layer.activation))
        m_w.append(mw)
        v_w.append(vw)
        m_b.append(mb)
        v_b.append(vb)
    new_state = AdamState(
        m_weights=m_w,
        v_weights=v_w,
        m_biases=m_b,
        v_biases=v_b,
        step=t,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon=state.epsilon,
    )
    return new_layers, new_state
