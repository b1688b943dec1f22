"""
Shared fixtures: seeded two-moons splits, small trained models and
constant decision units.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# add path to project
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from dataio.splits import split
from dataio.synthetic import gen_two_moons
from morphnas.exits import attach_exit, train_exits
from nn.model import init_mlp
from nn.trainer import TrainConfig, train


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def moons():
    """(train, validation, test) of 2 x 250 two-moons samples"""
    return split(gen_two_moons(250, 0.25, seed=0), (0.8, 0.1, 0.1), seed=0)


@pytest.fixture(scope="session")
def teacher(moons):
    train_set = moons[0]
    model, _ = train(init_mlp([2, 32, 32, 2], 1), train_set, TrainConfig(epochs=60, seed=1))
    return model


@pytest.fixture(scope="session")
def client(moons):
    train_set = moons[0]
    model, _ = train(init_mlp([2, 6, 6, 6, 2], 2), train_set, TrainConfig(epochs=30, seed=2))
    return model


@pytest.fixture(scope="session")
def two_exit(client, moons):
    return train_exits(attach_exit(client, seed=3), moons[0], TrainConfig(epochs=20, seed=3))
