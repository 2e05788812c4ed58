from __future__ import annotations

import numpy as np
import pytest

from models import SplitOdeProblem
from services.problems import make_bi_directional, make_brusselator, make_one_directional


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def one_directional():
    return make_one_directional()


@pytest.fixture
def bi_directional():
    return make_bi_directional()


@pytest.fixture
def brusselator():
    return make_brusselator()


@pytest.fixture
def cache_dir(tmp_path):
    return str(tmp_path / 'reference-cache')


def make_linear_problem(L, u0, t_end=1.0, forcing=None) -> SplitOdeProblem:
    """Problem with N(t, u) = forcing (zero by default)"""
    L = np.asarray(L, dtype=float)
    constant = np.zeros(L.shape[0]) if forcing is None else np.asarray(forcing, dtype=float)
    return SplitOdeProblem('linear', L, lambda t, u: constant.copy(), 0.0, t_end, u0)


@pytest.fixture
def linear_problem():
    return make_linear_problem
