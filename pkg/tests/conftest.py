import contextlib
import sys
import time

import pytest

from nqkv import _backend, _pykernels

_ACCEPTANCE = []

_BACKEND_USERS = ("nqkv.codec", "nqkv.cache", "nqkv.attention")


def _kernel_params():
    params = [pytest.param(_pykernels, id="python")]
    if _backend.compiled is not None:
        params.insert(0, pytest.param(_backend.compiled, id="cython"))
    return params


@pytest.fixture(params=_kernel_params())
def backend(request, monkeypatch):
    """Run the test once per available kernel implementation."""
    for name in _BACKEND_USERS:
        monkeypatch.setattr(sys.modules[name], "kernels", request.param)
    return request.param


@pytest.fixture
def acceptance():
    """Context manager recording one acceptance criterion and its runtime budget."""

    @contextlib.contextmanager
    def record(number, title, budget_s=None):
        start = time.perf_counter()
        status = "FAIL"
        try:
            yield
            elapsed = time.perf_counter() - start
            if budget_s is not None:
                assert elapsed < budget_s, f"took {elapsed:.2f}s, budget {budget_s}s"
            status = "PASS"
        finally:
            elapsed = time.perf_counter() - start
            line = f"[{status}] criterion {number}: {title} ({elapsed:.2f}s)"
            _ACCEPTANCE.append(line)
            print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
