import numpy as np
import pytest

from repr_robust.encoders import Encoder, EncoderSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def mlp_encoder():
    return Encoder(EncoderSpec("mlp", 8, 1, (16, 8), repr_dim=6, seed=11))


@pytest.fixture
def cnn_encoder():
    return Encoder(EncoderSpec("cnn", 8, 1, (4, 8), repr_dim=6, seed=12))


@pytest.fixture
def norm_encoder():
    return Encoder(EncoderSpec("mlp", 8, 1, (16,), repr_dim=6,
                               normalize=True, seed=13))


def identity_encoder(side=2):
    """Single linear layer with identity weights: f(x) = flatten(x)."""
    dim = side * side
    spec = EncoderSpec("mlp", side, 1, (), repr_dim=dim, seed=0)
    params = np.concatenate([np.eye(dim).reshape(-1), np.zeros(dim)])
    return Encoder(spec, params)


def linear_encoder(weights, side, channels=1):
    """Single linear layer f(x) = flatten(x) @ weights, zero bias."""
    weights = np.asarray(weights, dtype=np.float64)
    spec = EncoderSpec("mlp", side, channels, (), repr_dim=weights.shape[1],
                       seed=0)
    params = np.concatenate([weights.reshape(-1),
                             np.zeros(weights.shape[1])])
    return Encoder(spec, params)
