import numpy as np
import pytest

from glai import _kernels


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    if request.param == "numba" and _kernels.numba_impl is None:
        pytest.skip("numba not installed")
    monkeypatch.setenv("GLAI_DISABLE_NUMBA", "1" if request.param == "numpy" else "0")
    assert _kernels.backend_name() == request.param
    return request.param


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
