import numpy as np
import pytest

from compaug.data import SyntheticSpec, generate_synthetic, train_val_split
from compaug.model import TrainConfig
from compaug.training import CompetitiveConfig, train_competitive


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic(SyntheticSpec(subjects=3, windows_per_subject_per_class=20, seed=3))


@pytest.fixture(scope="session")
def trained(small_corpus):
    train, val = train_val_split(small_corpus, 0.2, np.random.default_rng(0))
    cfg = CompetitiveConfig(train=TrainConfig(max_epochs=15, cawr_period=5, seed=4))
    return train_competitive(train, val, cfg)


@pytest.fixture(scope="session")
def artifact(trained):
    return trained[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
