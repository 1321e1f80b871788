import numpy as np
import pytest

from dissent.ensemble import Ensemble
from dissent.nn import MlpParams, init_params


def random_params(rng, arch, scale=1.0):
    d_in, hidden, k = arch
    return MlpParams(
        scale * rng.standard_normal((d_in, hidden)),
        scale * rng.standard_normal(hidden),
        scale * rng.standard_normal((hidden, k)),
        scale * rng.standard_normal(k),
    )


def linear_params(weights, bias=None, offset=10.0):
    """A network that is exactly ``x @ weights + bias`` on the box ``[-offset, offset]^d``.

    The hidden layer is the identity shifted by ``offset`` so every rectifier
    stays active; the shift is removed again in the output bias.
    """
    weights = np.asarray(weights, dtype=np.float64)
    d, k = weights.shape
    bias = np.zeros(k) if bias is None else np.asarray(bias, dtype=np.float64)
    return MlpParams(np.eye(d), np.full(d, offset), weights, bias - offset * weights.sum(axis=0))


def random_ensemble(rng, arch, n):
    return Ensemble([random_params(rng, arch) for _ in range(n)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_ensemble(rng):
    return Ensemble([init_params((6, 5, 4), rng) for _ in range(3)])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
