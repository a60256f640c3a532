import math

import numpy as np
import pytest

# Gibbs weights of diag(0, 1) at beta = 1, evaluated by hand: 1/(1+e^-1), e^-1/(1+e^-1)
Z1 = 1.0 + math.exp(-1.0)
P0 = 1.0 / Z1
P1 = math.exp(-1.0) / Z1


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
