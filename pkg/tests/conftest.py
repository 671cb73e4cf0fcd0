import os
import sys

# Add project root to sys.path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import numpy as np
import pytest

from models.model_factory import build_lenet5
from src.noise.spec import NoiseSpec
from src.utils.data_utils import Dataset


def make_toy_dataset(per_class=8, num_classes=10, side=28, channels=1, seed=0, name="toy"):
    """Each class lights up its own 6x6 block; light pixel noise on top. Linearly separable."""
    rng = np.random.default_rng(seed)
    n = per_class * num_classes
    labels = np.repeat(np.arange(num_classes), per_class)
    images = rng.uniform(0.0, 0.1, size=(n, channels, side, side))
    for i, c in enumerate(labels):
        r, col = divmod(int(c), 4)
        images[i, :, 2 + 6 * r:8 + 6 * r, 2 + 6 * col:8 + 6 * col] = 0.9
    return Dataset(images.astype(np.float32), labels, num_classes, name=name)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def toy_dataset():
    return make_toy_dataset()


@pytest.fixture
def toy_test_dataset():
    return make_toy_dataset(per_class=3, seed=1, name="toy-test")


@pytest.fixture
def lenet():
    return build_lenet5(NoiseSpec(), seed=0, dtype=np.float64)


@pytest.fixture
def batch(toy_dataset):
    x = toy_dataset.normalize(toy_dataset.images[::4], np.float64)
    y = toy_dataset.labels[::4]
    return x, y
