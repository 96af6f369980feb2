import numpy as np
import pytest

from surfflow.constitutive import ModelParams, build_default_set


@pytest.fixture(scope="session")
def params():
    return ModelParams()


@pytest.fixture(scope="session")
def cset(params):
    return build_default_set(params)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260809)
