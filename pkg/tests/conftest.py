import os
from pathlib import Path

import pytest

from ecad.config import parse_config
from ecad.dataset import load_mnist, synthetic_mnist

from helpers import LISTING_CONFIG


def find_mnist_dir() -> Path | None:
    """Real MNIST IDX directory if one is available."""
    candidates = [os.environ.get("ECAD_MNIST_DIR"), "data/mnist"]
    for cand in candidates:
        if cand and Path(cand).is_dir():
            return Path(cand)
    return None


@pytest.fixture(scope="session")
def listing_cfg():
    return parse_config(LISTING_CONFIG)


@pytest.fixture(scope="session")
def eval_dataset():
    """Real MNIST when present, otherwise the deterministic synthetic stand-in."""
    mnist_dir = find_mnist_dir()
    if mnist_dir is not None:
        return load_mnist(mnist_dir), True
    return synthetic_mnist(seed=0), False


@pytest.fixture(scope="session")
def small_dataset():
    """Quick synthetic split for unit tests."""
    return synthetic_mnist(seed=1, n_train=4000, n_test=1000)
