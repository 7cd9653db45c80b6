from __future__ import annotations

import warnings

import numpy as np
import pytest

from blochrte.bloch import PeriodicPotential, basis_with_count, solve_grid
from blochrte.disorder import CorrelationModel
from blochrte.kernel import KernelWarning
from blochrte.lattice import build_lattice, bz_grid

HEX = [[1.0, 0.0], [0.5, np.sqrt(3) / 2]]


@pytest.fixture(scope="session")
def lat1():
    return build_lattice(1, [[1.0]])


@pytest.fixture(scope="session")
def lat2():
    return build_lattice(2, HEX)


@pytest.fixture(scope="session")
def cosine():
    return PeriodicPotential.cosine(1, 0.3)


@pytest.fixture(scope="session")
def gauss_model():
    return CorrelationModel("gaussian", 0.05, 0.5)


@pytest.fixture(scope="session")
def desk_table(lat1, cosine):
    """1D two-band desk case on a 32-point grid."""
    return solve_grid(bz_grid(lat1, 32), basis_with_count(lat1, 21), cosine, None, 2, layout="scalar")


@pytest.fixture
def quiet_kernel():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KernelWarning)
        yield


_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE.append


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
