import numpy as np
import pytest

from ensverify.data import digits_dataset, make_splits
from ensverify.training import TrainConfig, train_pool


@pytest.fixture(scope="session")
def digits_splits():
    d = digits_dataset()
    test = d.subset(range(len(d) - 400, len(d)))
    rest = d.subset(range(len(d) - 400))
    return make_splits(rest, 0.2, 0, test)


@pytest.fixture(scope="session")
def digits_pool(digits_splits):
    cfg = TrainConfig(hidden=(12,), epochs=60, batch_size=32, learning_rate=0.3)
    return train_pool(digits_splits, cfg, 6, base_seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
