import numpy as np
import pytest

from sepsiq.mlp import Activation, DenseLayer, init_layer


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_random_stack(rng, widths, last_identity=True):
    """Small random layer stack; widths like (in, h1, ..., out)."""
    layers = []
    for i in range(len(widths) - 1):
        last = i == len(widths) - 2
        act = Activation.IDENTITY if (last and last_identity) else Activation.LEAKY_RELU
        layers.append(init_layer(widths[i], widths[i + 1], act, rng))
    return layers


def identity_layer(weights, biases=None):
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    if biases is None:
        biases = np.zeros(weights.shape[0])
    return DenseLayer(weights, biases, Activation.IDENTITY)
