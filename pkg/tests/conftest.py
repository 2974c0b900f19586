import numpy as np
import pytest

from tugofwar.core import ExponentField, PayoffField, ProblemSpec, RunConfig
from tugofwar import pde_solver


def make_spec(p=2.0, mu=(0.0, 0.0), r=0.0, payoff=None, n=2, T=1.0, lipschitz_g=2.0):
    p_field = ExponentField.constant(p) if np.isscalar(p) else p
    return ProblemSpec(n=n, T=T, mu=mu, r=r, p_field=p_field,
                       payoff=payoff or PayoffField.gaussian_bump(), lipschitz_g=lipschitz_g)


@pytest.fixture
def heat_spec():
    return make_spec()


@pytest.fixture(scope="session")
def default_spec():
    return RunConfig.from_mapping({}).problem_spec()


def small_solve(spec, operator="lower_m", m=10.0, R=1.5, h=0.1, store_every=1, **kw):
    sc = pde_solver.SolverConfig(operator_choice=operator, m=m, store_every=store_every, **kw)
    grid = pde_solver.make_grid(spec, R, h, sc)
    return pde_solver.solve(spec, grid, sc)


_CRITERIA: dict = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> bool:
    _CRITERIA[number] = (title, bool(passed), detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
