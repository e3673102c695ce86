import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from reggeflow import models  # noqa: E402


@pytest.fixture(scope="session")
def pcells():
    """Unit-edge boundary lattices of the 5-, 16- and 600-cell, keyed by p."""
    return {p: models.generate_pcell_lattice(p) for p in (3, 4, 5)}


@pytest.fixture(scope="session")
def bcc():
    return models.bcc_torus(3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, printed after the run (see test_acceptance.py)
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
