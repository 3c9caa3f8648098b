import sys

import numpy as np
import pytest

from spinlab.model import MixtureFunction, RsbMeasure, fixture_f1


@pytest.fixture
def f1():
    return fixture_f1()


@pytest.fixture
def rs():
    return MixtureFunction.pure(2, 0.5), RsbMeasure.replica_symmetric()


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)



def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
