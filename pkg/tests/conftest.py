"""Shared helpers: random smooth controllers used as test inputs."""

import numpy as np
import pytest
from scipy.special import expit, softmax


def smooth_gamma(rng):
    """Random sigmoid-of-cubic probability function on [-1, 1]."""
    c = rng.normal(0, 1.5, size=4)

    def fn(theta):
        t = np.asarray(theta, dtype=float)
        return expit(c[0] + c[1] * t + c[2] * t**2 + c[3] * t**3)

    return fn


def smooth_gamma_vec(rng, L):
    """Random softmax-of-quadratics probability vector of length L."""
    c = rng.normal(0, 1.5, size=(3, L))

    def fn(theta):
        t = np.asarray(theta, dtype=float).reshape(-1, 1)
        return softmax(c[0] + c[1] * t + c[2] * t**2, axis=1)

    return fn


def stack_bits(fns):
    def fn(theta):
        return np.stack([f(theta) for f in fns], axis=1)

    return fn


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
