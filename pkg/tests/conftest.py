import numpy as np
import pytest

from ivsmpc.model import ChanceConstraint, LinearSystem, synthesize

DCDC_A = np.array([[1.0, 0.0075], [-0.143, 0.996]])
DCDC_B = np.array([[4.798], [0.115]])
DCDC_Q = np.diag([1.0, 10.0])
DCDC_R = np.array([[10.0]])


@pytest.fixture(scope="session")
def dcdc():
    return LinearSystem(DCDC_A, DCDC_B, 0.1 * np.eye(2))


@pytest.fixture(scope="session")
def dcdc_gains(dcdc):
    return synthesize(dcdc, DCDC_Q, DCDC_R)


@pytest.fixture(scope="session")
def dcdc_constraint():
    return ChanceConstraint(np.array([1.0, 0.0]), 2.0, 0.9)


def random_stable(rng, n, radius=0.9):
    a = rng.standard_normal((n, n))
    return a * (radius / max(abs(np.linalg.eigvals(a))))


def random_psd(rng, n, rank=None):
    f = rng.standard_normal((n, rank or n))
    return f @ f.T


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
