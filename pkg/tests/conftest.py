import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from qpsplit import _backend  # noqa: E402


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    if request.param == "numba" and not _backend.NUMBA_AVAILABLE:
        pytest.skip("numba not installed")
    monkeypatch.setattr(_backend, "USE_NUMBA", request.param == "numba")
    return request.param


@pytest.fixture
def numpy_backend(monkeypatch):
    monkeypatch.setattr(_backend, "USE_NUMBA", False)
