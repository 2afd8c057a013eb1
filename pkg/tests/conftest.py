import numpy as np
import pytest

from ssrkit.data import SyntheticSpec, encode_dataset, generate


@pytest.fixture(scope="session")
def small_dataset():
    spec = SyntheticSpec(n_samples=6000, cat_vocab_sizes=tuple([20] * 6),
                         k_relevant=4, positive_rate=0.25, seed=3)
    return generate(spec)


@pytest.fixture(scope="session")
def small_encoded(small_dataset):
    return encode_dataset(small_dataset)


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.PCG64(12345))
