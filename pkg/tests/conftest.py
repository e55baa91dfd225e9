import numpy as np
import pytest

from muffin.simulate import simulate
from muffin.solver import Problem

from oracles import brute_circular_convolution, dct2_matrix, rel  # noqa: F401


@pytest.fixture(scope="session")
def small_dataset():
    return simulate((16, 16), 4, fill=0.15, snr_db=10, seed=0)


@pytest.fixture(scope="session")
def small_problem(small_dataset):
    return Problem(small_dataset.dirty, small_dataset.psf)
