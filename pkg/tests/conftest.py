import numpy as np
import pytest
from hypothesis import settings

from wmsr.sscan import kernels

settings.register_profile("wmsr", max_examples=40, deadline=None)
settings.load_profile("wmsr")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    """Every available scan backend (the compiled one only when it was built)."""
    return request.param
