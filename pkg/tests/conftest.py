import numpy as np
import pytest

from lgrnet.numkit.rng import Rng


@pytest.fixture
def rng():
    return Rng(1234)


def assert_close(a, b, atol=1e-12, rtol=0.0):
    np.testing.assert_allclose(np.asarray(a), np.asarray(b), atol=atol, rtol=rtol)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
