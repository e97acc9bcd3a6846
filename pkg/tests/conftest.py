import numpy as np
import pytest

from pathmorse.geometry import ChartModel, SphereModel, free_system


@pytest.fixture(scope="session")
def s2():
    """Unit 2-sphere with the default free system: dressing factor exactly 1."""
    return SphereModel(2, free_system())


@pytest.fixture(scope="session")
def s3():
    return SphereModel(3, free_system())


@pytest.fixture(scope="session")
def flat2():
    """Euclidean plane chart, factor 1."""
    return ChartModel.euclidean(2, free_system())


@pytest.fixture(scope="session")
def quarter_endpoints():
    """p, q on S^2 at angle pi/2."""
    p = np.array([1.0, 0.0, 0.0])
    q = np.array([0.0, 1.0, 0.0])
    return p, q
