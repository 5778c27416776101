import os
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

from roughldp import make_kernel, make_modulus  # noqa: E402

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def logbm_kernel():
    mod = make_modulus("logarithmic", {"beta": 2.0}, 0.04)
    return make_kernel("mv_stationary", {"modulus": mod}, 0.04)


@pytest.fixture
def power_kernel():
    return make_kernel("mv_stationary", {"modulus": make_modulus("power", {"H": 0.3}, 1.0)}, 1.0)
