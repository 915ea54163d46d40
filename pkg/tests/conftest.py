import numpy as np
import pytest

from stochreach import (
    ExponentialLaw,
    GaussianLaw,
    Polytope,
    Pursuer,
    PursuitProblem,
    double_integrator,
    point_mass,
)

PM_MEAN = np.array([1.3, 0.3])
PM_SIGMA = np.array([[0.5, 0.8], [0.8, 2.0]])
PM_X0 = np.array([-3.0, 0.0])
DI_RATES = np.array([0.25, 0.45])
DI_X0 = np.array([1.5, 0.0, -0.5, 2.0])


def make_pm_problem(T=20):
    return PursuitProblem(
        point_mass(0.2, T),
        GaussianLaw(PM_MEAN, PM_SIGMA),
        PM_X0,
        Pursuer([-3.0, -2.0], Polytope.from_box([1.0, 1.0], [2.0, 2.0]), 0.2),
        0.25,
    )


def make_di_problem(T=9):
    return PursuitProblem(
        double_integrator(0.2, T),
        ExponentialLaw(DI_RATES),
        DI_X0,
        Pursuer([2.5, 0.0], Polytope.from_box([-1.5, 1.0], [1.5, 4.0]), 0.2),
        0.25,
    )


@pytest.fixture(scope="session")
def pm_problem():
    return make_pm_problem()


@pytest.fixture(scope="session")
def di_problem():
    return make_di_problem()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def pm_plan(pm_problem):
    from stochreach import solve_prob_b

    return solve_prob_b(pm_problem)


@pytest.fixture(scope="session")
def di_plan(di_problem):
    from stochreach import solve_prob_b

    return solve_prob_b(di_problem)


ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    """Store one acceptance line; printed in the terminal summary and to stdout."""
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
