import numpy as np
import pytest

from rankclip_lab.data import DatasetSpec, generate_dataset
from rankclip_lab.tensor import Tensor


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_spec():
    return DatasetSpec(pairs_per_class=12, eval_pairs=64, seed=3)


@pytest.fixture(scope="session")
def small_ds(small_spec):
    return generate_dataset(small_spec)


def tensor(x, grad=False):
    return Tensor(np.asarray(x, dtype=float), requires_grad=grad)
