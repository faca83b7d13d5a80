import numpy as np
import pytest

from huntbranch.fixtures import get_fixture
from huntbranch.spectral import build_operator, principal_triple


def within_se(mean, se, target, k=4.0):
    return abs(mean - target) <= k * se


def mean_se(values):
    v = np.asarray(values, dtype=float)
    return v.mean(), v.std(ddof=1) / np.sqrt(v.size)


@pytest.fixture(scope="session")
def yule2():
    return get_fixture("yule2")


@pytest.fixture(scope="session")
def asym3():
    return get_fixture("asym3")


@pytest.fixture(scope="session")
def yule2_triple(yule2):
    return principal_triple(build_operator(yule2.motion, yule2.law))


@pytest.fixture(scope="session")
def asym3_op(asym3):
    return build_operator(asym3.motion, asym3.law)


@pytest.fixture(scope="session")
def asym3_triple(asym3_op):
    return principal_triple(asym3_op)
