"""
Shared fixtures: model parameter sets and an application bound to an
in-memory database.
"""

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app import create_app  # noqa: E402
from hamiltonian import ModelParams  # noqa: E402


@pytest.fixture
def rabi():
    """Quantum Rabi model, lambda = t = 1."""
    return ModelParams.rabi(1.0, 1.0)


@pytest.fixture
def decoupled():
    return ModelParams.rabi(0.0, 1.0)


@pytest.fixture
def two_spins():
    """N = 2, M = 1 with unequal couplings."""
    return ModelParams(2, 1, [[0.8, 0.5]], [1.0, 0.7])


@pytest.fixture
def app():
    app = create_app({"TESTING": True, "SQLALCHEMY_DATABASE_URI": "sqlite://"})
    yield app


@pytest.fixture
def runner(app):
    return app.test_cli_runner()
