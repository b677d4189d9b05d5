import os

# keep BLAS single-threaded so worker pools on small machines do not
# oversubscribe the cores (must happen before numpy loads)
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np
import pytest

from fredholm import Domain, analytic_gaussian_problem, gaussian_mixture_problem


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def unit_domain():
    return Domain(lower=[0.0], upper=[1.0])


@pytest.fixture(scope="session")
def analytic_problem():
    return analytic_gaussian_problem()


@pytest.fixture(scope="session")
def mixture_problem():
    return gaussian_mixture_problem()
