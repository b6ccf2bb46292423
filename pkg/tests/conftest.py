import numpy as np
import pytest

from mflq import scalar_model, solve_limit


@pytest.fixture(scope="session")
def ex1():
    return scalar_model("example1")


@pytest.fixture(scope="session")
def ex2():
    return scalar_model("example2")


@pytest.fixture(scope="session")
def ex3():
    return scalar_model("example3")


@pytest.fixture(scope="session")
def m0():
    return scalar_model("decoupled_m0")


@pytest.fixture(scope="session")
def lim1(ex1):
    out = solve_limit(ex1)
    assert out.ok
    return out.solution


@pytest.fixture(scope="session")
def lim2(ex2):
    out = solve_limit(ex2)
    assert out.ok
    return out.solution


@pytest.fixture(scope="session")
def lim_m0(m0):
    out = solve_limit(m0)
    assert out.ok
    return out.solution


@pytest.fixture(scope="session")
def unit_law():
    from mflq import InitialLaw
    return InitialLaw(mu0=np.array([1.0]), sigma0=np.array([[0.0]]))
