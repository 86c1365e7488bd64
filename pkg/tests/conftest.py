import numpy as np
import pytest

from simptopo.problems import builtin_problem
from simptopo.simp_model import DesignField


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(scope="session")
def small_cantilever():
    return builtin_problem("cantilever", 6, 4, 0.5)


def random_interior_field(problem, rng, low=0.2, high=0.9):
    rho = rng.uniform(low, high, problem.grid.n_elements)
    vols = np.full(rho.size, problem.grid.elem_volume)
    return DesignField(rho, vols, float(rho @ vols), problem.rho_min)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.summary_lines():
        terminalreporter.write_line(line)
