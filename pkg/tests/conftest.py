import os
import tempfile

import pytest

import dynident


@pytest.fixture(scope="session")
def model():
    return dynident.load_model()


@pytest.fixture(scope="session")
def true_params(model):
    return dynident.psm_reference_parameters(model)


@pytest.fixture(scope="session")
def limits():
    return dynident.load_limits()


@pytest.fixture(scope="session")
def base(model):
    return dynident.compute_base(model)


def make_model(cfg_text):
    """Load a model from literal config text (file kept for the process lifetime)."""
    fd, path = tempfile.mkstemp(suffix=".cfg")
    with os.fdopen(fd, "w") as fh:
        fh.write(cfg_text)
    return dynident.load_model(path)


PENDULUM_CFG = """
[lengths]

[links]
1  base  0  0  0  q1  L,F  -

[gravity]
g = 0 -9.81 0
"""

DOUBLE_PENDULUM_CFG = """
[lengths]
l_1 = 0.5

[links]
1  base  0    0  0  q1  L  -
2  1     l_1  0  0  q2  L  -

[gravity]
g = 0 0 0
"""
