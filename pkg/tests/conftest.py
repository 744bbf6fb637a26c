import numpy as np
import pytest

from adlab.model import Domain, ModelSpec, MutationLaw, ScalingParams


@pytest.fixture(scope="session")
def model_a():
    """Reference model: b = 2 + tanh(y - x), theta = 1, uniform steps on [-1, 1].

    Derived constants: b(z,z) = 2, beta = 1/2, m2 = 1/3, lambda = 6,
    fitness gradient on the diagonal = 2.
    """
    return ModelSpec("2 + tanh(y - x)", "1", MutationLaw())


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from _criteria import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(LINES):
            terminalreporter.write_line(line)
