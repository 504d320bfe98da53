"""Shared fixtures"""
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.ensembles import ab_ensemble, center, point_mass  # noqa: E402
from src.estimators import lyapunov_transfer  # noqa: E402

A = [[2.0, 1.0], [1.0, 1.0]]
B = [[1.0, 1.0], [1.0, 2.0]]


@pytest.fixture
def ab_law():
    """Uncentered {A, B} ensemble"""
    return ab_ensemble()


@pytest.fixture
def centered_ab_law():
    """{A, B} ensemble centered by the transfer-operator Lyapunov exponent"""
    law = ab_ensemble()
    return center(law, lyapunov_transfer(law).value)


@pytest.fixture
def identity_law():
    return point_mass(np.eye(2))


@pytest.fixture
def a_law():
    return point_mass(A)
