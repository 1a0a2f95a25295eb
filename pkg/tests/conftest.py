import pytest

from cachelab.rsa import keygen


@pytest.fixture(scope="session")
def key512():
    return keygen(512, rng_seed=1)


@pytest.fixture(scope="session")
def key2048():
    return keygen(2048, rng_seed=1)
