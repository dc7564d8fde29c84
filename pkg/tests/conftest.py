import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from app.kernel import Partition, make_kernel  # noqa: E402


@pytest.fixture
def brownian():
    return make_kernel("brownian")


@pytest.fixture
def fbm035():
    return make_kernel("fbm", {"H": 0.35})


@pytest.fixture
def fbm02():
    return make_kernel("fbm", {"H": 0.2})


@pytest.fixture
def all_kernels():
    return [
        make_kernel("brownian"),
        make_kernel("fbm", {"H": 0.35}),
        make_kernel("fbm", {"H": 0.2}),
        make_kernel("ou", {"lam": 1.5, "sigma": 0.8}),
        make_kernel("bridge"),
    ]


@pytest.fixture
def grid16():
    return Partition.uniform(16)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
