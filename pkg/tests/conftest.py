import importlib

import numpy as np
import pytest

from condpca import _kernels_py
from condpca._backend import COMPILED

_USERS = ("condpca.covariance", "condpca.mean", "condpca.mewma", "condpca.bootstrap")
BACKENDS = ["numpy"] + (["cython"] if COMPILED else [])


def use_backend(monkeypatch, name):
    mod = _kernels_py if name == "numpy" else importlib.import_module("condpca._kernels")
    for user in _USERS:
        monkeypatch.setattr(importlib.import_module(user), "kernels", mod)


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    use_backend(monkeypatch, request.param)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
