import numpy as np
import pytest

from predtrig.harness import reference_config
from predtrig.harness.runner import prepare


@pytest.fixture(scope="session")
def reference():
    return reference_config()


@pytest.fixture(scope="session")
def reference_setup(reference):
    return prepare(reference)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
