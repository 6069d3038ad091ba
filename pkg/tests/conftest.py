from __future__ import annotations

import numpy as np
import pytest

from fieldformer.simulators import GridSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_periodic():
    return GridSpec(12, 10, 40, 0.01)


@pytest.fixture
def small_open():
    return GridSpec(11, 9, 40, 0.01, periodic=False)
