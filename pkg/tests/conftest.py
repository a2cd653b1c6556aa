import pytest

from restop.comparator import solve_comparator
from restop.fixedpoint import solve
from restop.model import DelayLaw, reference_model


@pytest.fixture(scope="session")
def ref_model():
    return reference_model()


@pytest.fixture(scope="session")
def ref_result(ref_model):
    return solve(ref_model)


@pytest.fixture(scope="session")
def ref_comp(ref_model):
    return solve_comparator(ref_model)


@pytest.fixture(scope="session")
def mu1_model():
    # r = mu1 regime with mu2 < r
    return reference_model(mu1=0.06)


@pytest.fixture(scope="session")
def zero_delay_model():
    return reference_model(delay=DelayLaw.dirac_zero())
