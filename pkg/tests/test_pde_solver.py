import hashlib
import os

import numpy as np
import pytest

from tugofwar import pde_solver as ps
from tugofwar.core import ExponentField, GridFunction, PayoffField, SpaceTimeGrid
from tugofwar.errors import ConfigurationError, MarginError
from tugofwar.operators import ActionGrid, SecondOrderData, f_limit, isaacs_fields

from conftest import make_spec, small_solve


def gaussian_heat(x, tau, base=0.1, amp=1.0, width=1.0):
    """Backward heat flow of the Gaussian bump over remaining time tau, in 2-D."""
    s2 = width ** 2 + 2.0 * tau
    return base + amp * width ** 2 / s2 * np.exp(-np.sum(x * x, axis=-1) / (2.0 * s2))


def _quadratic(Q, w, c):
    return lambda X: 0.5 * np.einsum("...i,ij,...j->...", X, Q, X) + X @ w + c


Q = np.array([[1.3, -0.4], [-0.4, 0.7]])
W = np.array([0.3, -0.8])


@pytest.fixture
def quad_level():
    grid = SpaceTimeGrid.build(2, 1.0, 0.1, 1.0, dt=0.5)
    return GridFunction.sample(grid, _quadratic(Q, W, 0.2))


def test_discrete_derivatives_exact_on_quadratics(quad_level):
    node = (7, 12)
    x = quad_level.grid.node_coords(node)
    d = ps.discrete_derivatives(quad_level, node)
    assert np.allclose(d.M, Q, atol=1e-10)
    assert np.allclose(d.nu, Q @ x + W, atol=1e-12)
    assert d.xi == pytest.approx(quad_level.values[node])


@pytest.mark.parametrize("node", [(0, 5), (5, 20), (3,)])
def test_discrete_derivatives_margin(quad_level, node):
    with pytest.raises(MarginError):
        ps.discrete_derivatives(quad_level, node)


@pytest.mark.parametrize("op", ["lower_m", "upper_m"])
def test_level_operator_matches_exact_isaacs_on_quadratics(quad_level, op):
    spec = make_spec(p=ExponentField.sinusoidal(), mu=(0.1, 0.0), r=0.05)
    cfg = ps.SolverConfig(operator_choice=op, m=10.0, n_directions=64)
    grid = quad_level.grid
    got = ps.level_operator(quad_level.values, 0.4, grid, spec, cfg)
    pts = grid.points()[1:-1, 1:-1].reshape(-1, 2)
    nu = pts @ Q + W
    M = np.broadcast_to(Q, (len(pts), 2, 2))
    xi = quad_level.values[1:-1, 1:-1].reshape(-1)
    lo, up, _, _ = isaacs_fields(ActionGrid.uniform(2, 10.0, 64), nu, M, spec.p_field.evaluate(pts, 0.4), xi,
                                 spec.mu_array, spec.r)
    assert np.max(np.abs(got - (lo if op == "lower_m" else up))) <= 1e-9


def test_level_operator_limit_matches_f_limit(quad_level):
    spec = make_spec(p=3.0, mu=(0.1, 0.0), r=0.05)
    cfg = ps.SolverConfig(operator_choice="limit")
    grid = quad_level.grid
    got = ps.level_operator(quad_level.values, 0.0, grid, spec, cfg).reshape(grid.nodes_per_axis - 2, -1)
    for node in [(3, 4), (10, 10), (15, 2)]:
        d = ps.discrete_derivatives(quad_level, node)
        assert got[node[0] - 1, node[1] - 1] == pytest.approx(f_limit(None, 0.0, d, spec), abs=1e-9)


def test_limit_flat_nodes_use_envelope_midpoint():
    grid = SpaceTimeGrid.build(2, 1.0, 0.1, 1.0, dt=0.5)
    level = GridFunction.sample(grid, lambda X: X[..., 0] ** 2 - 0.5 * X[..., 1] ** 2)
    spec = make_spec(p=4.0)
    got = ps.level_operator(level.values, 0.0, grid, spec, ps.SolverConfig(operator_choice="limit"))
    centre = got.reshape(19, 19)[9, 9]
    # eigenvalues 2 and -1: trace 1 plus (p - 2) times their midpoint
    assert centre == pytest.approx(1.0 + 2.0 * 0.5, abs=1e-9)


@pytest.mark.parametrize("p,expected", [(4.0, {"lower": 1.0 - 2.0, "upper": 1.0 + 4.0}),
                                         (1.5, {"lower": 1.0 - 1.0, "upper": 1.0 + 0.5})])
def test_limit_flat_nodes_envelope_selection(p, expected):
    grid = SpaceTimeGrid.build(2, 1.0, 0.1, 1.0, dt=0.5)
    level = GridFunction.sample(grid, lambda X: X[..., 0] ** 2 - 0.5 * X[..., 1] ** 2)
    spec = make_spec(p=p)
    vals = {}
    for sel in ("lower", "midpoint", "upper"):
        cfg = ps.SolverConfig(operator_choice="limit", envelope_selection=sel)
        vals[sel] = ps.level_operator(level.values, 0.0, grid, spec, cfg).reshape(19, 19)[9, 9]
    # trace 1 plus (p - 2) times an eigenvalue in [-1, 2]
    assert vals["lower"] == pytest.approx(expected["lower"], abs=1e-9)
    assert vals["upper"] == pytest.approx(expected["upper"], abs=1e-9)
    assert vals["midpoint"] == pytest.approx(0.5 * (vals["lower"] + vals["upper"]), abs=1e-9)


def test_stable_dt_and_rejection():
    spec = make_spec(p=3.0, r=0.0)
    assert ps.stable_dt(spec, 0.1) == pytest.approx(0.01 / 6.0)
    cfg = ps.SolverConfig(operator_choice="limit")
    grid = ps.make_grid(spec, 1.0, 0.1, cfg, dt=0.01)
    with pytest.raises(ConfigurationError):
        ps.solve(spec, grid, cfg)


def test_make_grid_respects_safety():
    spec = make_spec(p=3.0)
    cfg = ps.SolverConfig(cfl_safety=0.5)
    grid = ps.make_grid(spec, 1.0, 0.1, cfg)
    assert grid.dt <= 0.5 * ps.stable_dt(spec, 0.1) * (1 + 1e-12)
    assert grid.n_t * grid.dt == pytest.approx(spec.T)


@pytest.mark.parametrize("kw", [{"operator_choice": "both"}, {"m": -1.0}, {"grad_epsilon": 0.0},
                                {"boundary_policy": "wrap"}, {"cfl_safety": 1.5}, {"store_every": 0},
                                {"envelope_selection": "max"}])
def test_solver_config_validation(kw):
    with pytest.raises(ConfigurationError):
        ps.SolverConfig(**kw)


def test_heat_limit_solve_small_grid():
    spec = make_spec(T=0.5)
    stack = small_solve(spec, "limit", R=3.0, h=0.1, store_every=50)
    pts = stack.grid.points()
    half = np.all(np.abs(pts) <= 1.5 + 1e-12, axis=-1)
    err = np.abs(stack.levels[-1] - gaussian_heat(pts, spec.T))[half]
    assert err.max() < 2e-2


def test_heat_lower_m_large_m_small_grid():
    # with p = 2 and no drift the controls only add drift, and the players cancel
    spec = make_spec(T=0.25)
    stack = small_solve(spec, "lower_m", m=1000.0, R=2.0, h=0.1, store_every=50, n_directions=32)
    pts = stack.grid.points()
    half = np.all(np.abs(pts) <= 1.0 + 1e-12, axis=-1)
    assert np.all(np.isfinite(stack.levels))
    assert np.abs(stack.levels[-1] - gaussian_heat(pts, spec.T))[half].max() < 2e-2


@pytest.mark.parametrize("op", ["lower_m", "upper_m", "limit"])
def test_bounds_and_terminal_level(op):
    spec = make_spec(p=ExponentField.sinusoidal(), mu=(0.1, 0.0), r=0.05, T=0.2)
    stack = small_solve(spec, op, n_directions=32, store_every=5)
    assert np.array_equal(stack.levels[0], spec.payoff.evaluate(stack.grid.points()))
    assert stack.levels.min() >= 0.0 and stack.levels.max() <= spec.lipschitz_g
    assert stack.level_index[-1] == stack.grid.n_t
    assert stack.times[-1] == pytest.approx(0.0, abs=1e-12)
    assert stack.metadata["achieved_cfl"] <= 0.9 + 1e-12


def test_comparison_small_grid():
    spec = make_spec(p=ExponentField.sinusoidal(), mu=(0.1, 0.0), r=0.05, T=0.2)
    spec2 = spec.replace(payoff=PayoffField.gaussian_bump(0.1, 1.2, 1.0))
    u1 = small_solve(spec, n_directions=32).levels
    u2 = small_solve(spec2, n_directions=32).levels
    assert np.count_nonzero(u1 > u2) == 0


def test_residual_vanishes_on_solver_output():
    spec = make_spec(p=ExponentField.sinusoidal(), mu=(0.1, 0.0), r=0.05, T=0.05)
    for op in ("lower_m", "limit"):
        stack = small_solve(spec, op, n_directions=32)
        for i in (1, len(stack) - 1):
            assert np.max(np.abs(ps.residual_field(stack, i))) < 1e-8
        assert abs(ps.residual(stack, (5, 5), 1)) < 1e-8
        with pytest.raises(MarginError):
            ps.residual(stack, (0, 5), 1)
        with pytest.raises(MarginError):
            ps.residual_field(stack, 0)


def test_barrier_box_dominates_clamp():
    spec = make_spec(p=3.0, mu=(0.1, 0.0), r=0.05)
    pts = np.random.default_rng(0).uniform(-4, 4, size=(200, 2))
    for t in (0.0, 0.5, 0.99, 1.0):
        clamp = ps.boundary_values(pts, t, spec, "clamp_to_g")
        box = ps.boundary_values(pts, t, spec, "barrier_box")
        assert np.all(box >= clamp - 1e-15)
        assert np.all(box <= spec.payoff.sup + 1e-15)


def test_from_function_stack():
    spec = make_spec()
    grid = SpaceTimeGrid.build(2, 1.0, 0.25, 1.0, dt=0.25)
    stack = ps.SolutionStack.from_function(grid, spec, ps.SolverConfig(), lambda X, t: X[..., 0] + t)
    assert len(stack) == 5
    assert np.allclose(stack.at_time(0.25), grid.points()[..., 0] + 0.25)
    nu, M = stack.derivative_fields(2)
    assert nu.shape == (9, 9, 2) and np.allclose(nu[..., 0], 1.0) and np.allclose(M, 0.0)


def _digest(paths):
    h = hashlib.sha256()
    for p in sorted(paths):
        h.update(os.path.basename(p).encode())
        with open(p, "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


def test_export_stack_deterministic(tmp_path):
    spec = make_spec(T=0.05)
    digests = []
    for run in ("a", "b"):
        stack = small_solve(spec, "limit", R=1.0, store_every=5)
        paths = ps.export_stack(stack, str(tmp_path / run), prefix="heat")
        digests.append(_digest(paths))
    assert digests[0] == digests[1]
    first = open(paths[0]).read().splitlines()
    assert first[0].startswith("# t=") and first[1] == "x1,x2,value"
    assert len(first) == 2 + 21 * 21


# ---------------------------------------------------------------- worked examples

def test_derivatives_of_constant_and_affine():
    grid = SpaceTimeGrid.build(2, 1.0, 0.1, 1.0, dt=0.5)
    const = ps.discrete_derivatives(GridFunction(grid, np.full(grid.shape, 0.4)), (5, 5))
    assert np.all(const.nu == 0) and np.all(const.M == 0)
    aff = ps.discrete_derivatives(GridFunction.sample(grid, lambda X: X @ np.array([0.5, -2.0]) + 1.0), (4, 9))
    assert np.allclose(aff.nu, [0.5, -2.0], atol=1e-12) and np.allclose(aff.M, 0.0, atol=1e-10)


@pytest.mark.parametrize("op", ["lower_m", "upper_m", "limit"])
def test_constant_payoff_is_invariant_without_discount(op):
    spec = make_spec(p=ExponentField.sinusoidal(), mu=(0.4, -0.2), r=0.0, payoff=PayoffField.constant(0.7),
                     lipschitz_g=1.0)
    stack = small_solve(spec, op, n_directions=16, store_every=25)
    assert np.max(np.abs(stack.levels - 0.7)) <= 1e-14


@pytest.mark.parametrize("op", ["lower_m", "limit"])
def test_constant_payoff_discounts(op):
    spec = make_spec(p=3.0, mu=(0.1, 0.0), r=0.5, payoff=PayoffField.constant(0.7), lipschitz_g=1.0)
    stack = small_solve(spec, op, n_directions=16, store_every=25)
    exact = 0.7 * np.exp(-0.5 * (spec.T - stack.times))
    err = np.max(np.abs(stack.levels - exact[:, None, None]))
    assert err <= 0.7 * 0.5 ** 2 * stack.grid.dt * spec.T


def test_heat_oracle_residual_is_consistent():
    spec = make_spec()
    cfg = ps.SolverConfig(operator_choice="limit")
    errs = []
    for h in (0.2, 0.1):
        grid = ps.make_grid(spec, 3.0, h, cfg)
        stack = ps.SolutionStack.from_function(grid, spec, cfg, lambda X, t: gaussian_heat(X, spec.T - t),
                                               [grid.n_t // 2 - 1, grid.n_t // 2])
        errs.append(np.max(np.abs(ps.residual_field(stack, 1))))
        assert errs[-1] <= 2.0 * (h ** 2 + grid.dt)
    assert errs[1] < 0.5 * errs[0]


PAIRS = [
    (PayoffField.gaussian_bump(), PayoffField.gaussian_bump(0.1, 1.2, 1.0)),
    (PayoffField.gaussian_bump(), PayoffField.gaussian_bump().shifted(0.1)),
    (PayoffField.constant(0.1), PayoffField.gaussian_bump()),
]


@pytest.mark.parametrize("g1,g2", PAIRS, ids=["amplitude", "shift", "floor"])
def test_comparison_three_pairs(g1, g2):
    base = make_spec(p=ExponentField.sinusoidal(), mu=(0.1, 0.0), r=0.05, T=0.2)
    s1 = small_solve(base.replace(payoff=g1), n_directions=32, store_every=5)
    s2 = small_solve(base.replace(payoff=g2), n_directions=32, store_every=5)
    assert np.all(s1.levels[0] <= s2.levels[0])
    assert np.count_nonzero(s1.levels > s2.levels) == 0


@pytest.mark.slow
def test_heat_lower_m_large_m_default_grid():
    spec = make_spec()
    sc = ps.SolverConfig(operator_choice="lower_m", m=1000.0, store_every=100)
    stack = ps.solve(spec, ps.make_grid(spec, 4.0, 0.05, sc), sc)
    pts = stack.grid.points()
    half = np.all(np.abs(pts) <= 2.0 + 1e-12, axis=-1)
    assert np.abs(stack.levels[-1] - gaussian_heat(pts, spec.T))[half].max() <= 2e-2
