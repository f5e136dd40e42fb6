import numpy as np
import pytest
from hypothesis import settings

from mfgchar import coefficients as co
from mfgchar.characteristics import SolverConfig
from mfgchar.measure import EmpiricalMeasure

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def warped_grid(n, delta=0.05, d=1):
    u = np.arange(n) / n
    x = u + delta * np.sin(2 * np.pi * u) / (2 * np.pi)
    return EmpiricalMeasure(np.repeat(x[:, None], d, axis=1))


@pytest.fixture
def quad():
    return co.builtin_quadratic_hamiltonian()


@pytest.fixture
def trivial_triple(quad):
    return co.CoefficientTriple(quad, co.builtin_zero_coupling(),
                                co.builtin_constant_coupling(0.7), theta=1.1)


@pytest.fixture
def oracle_triple(quad):
    g = co.builtin_cosine_force(0.05, 1)
    return co.CoefficientTriple(quad, co.builtin_zero_coupling(), g,
                                theta=1.1 * co.theta_threshold(g.kappa))


@pytest.fixture
def conv_triple(quad):
    F = co.builtin_convolution_coupling(co.cosine_kernel(0.5, 1))
    g = co.builtin_convolution_coupling(co.FourierKernel.from_modes([((1,), 0.3), ((2,), 0.1)], 1))
    return co.CoefficientTriple(quad, F, g, theta=1.1 * co.theta_threshold(max(F.kappa, g.kappa)))


@pytest.fixture
def conv2d_triple(quad):
    F = co.builtin_convolution_coupling(co.FourierKernel.from_modes(
        [((1, 0), 0.2), ((0, 1), 0.15), ((1, 1), 0.1)], 2))
    g = co.builtin_convolution_coupling(co.FourierKernel.from_modes(
        [((1, 0), 0.15), ((1, -1), 0.08)], 2))
    return co.CoefficientTriple(quad, F, g, theta=1.1 * co.theta_threshold(max(F.kappa, g.kappa)))


@pytest.fixture
def cfg():
    return SolverConfig(T=0.1, s=0.1, K=40)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
