import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tugofwar import analysis
from tugofwar import pde_solver as ps
from tugofwar.core import ExponentField, SpaceTimeGrid
from tugofwar.errors import DomainError
from tugofwar.harness import brute_force_convolution

from conftest import make_spec


def _brute_1d(f, x, eps, direction):
    d2 = (x[:, None] - x[None, :]) ** 2 / (2 * eps)
    return (f[None, :] - d2).max(axis=1) if direction == "sup" else (f[None, :] + d2).min(axis=1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.floats(1e-3, 10), st.sampled_from(["sup", "inf"]))
def test_one_dimensional_matches_pairwise(vals, eps, direction):
    f = np.array(vals)
    x = np.cumsum(np.random.default_rng(len(vals)).uniform(0.01, 1.0, len(vals)))
    got = analysis.quad_convolution(f, [x], analysis.ConvolutionParams(eps, direction))
    assert np.max(np.abs(got - _brute_1d(f, x, eps, direction))) <= 1e-12 * (1 + np.abs(f).max())


@pytest.mark.parametrize("shape", [(7, 9), (5, 6, 4)])
def test_nonuniform_axes_match_bruteforce(shape):
    rng = np.random.default_rng(0)
    f = rng.normal(size=shape)
    coords = [np.sort(rng.uniform(-1, 1, s)) for s in shape]
    for d in ("sup", "inf"):
        prm = analysis.ConvolutionParams(0.3, d)
        assert np.max(np.abs(analysis.quad_convolution(f, coords, prm) - brute_force_convolution(f, coords, prm))) <= 1e-12


def test_convolution_of_constant_and_of_quadratic():
    x = np.linspace(-2, 2, 41)
    prm = analysis.ConvolutionParams(0.5, "sup")
    assert np.allclose(analysis.quad_convolution(np.full(41, 3.0), [x], prm), 3.0)
    # sup_z -z^2/2 - (x-z)^2/(2 eps) = -x^2 / (2 (1 + eps)), exact when the optimum is a grid node
    f = -x ** 2 / 2
    got = analysis.quad_convolution(f, [x], analysis.ConvolutionParams(1.0, "sup"))
    mid = np.abs(x) <= 1.0
    on_grid = np.isclose(np.round(x / 2 / 0.1) * 0.1, x / 2)
    assert np.allclose(got[mid & on_grid], (-x ** 2 / 4)[mid & on_grid])


def test_convolution_domain_errors():
    with pytest.raises(DomainError):
        analysis.ConvolutionParams(0.0)
    with pytest.raises(DomainError):
        analysis.ConvolutionParams(1.0, "max")
    with pytest.raises(DomainError):
        analysis.quad_convolution(np.zeros((3, 3)), [np.arange(3)], analysis.ConvolutionParams(1.0))
    with pytest.raises(DomainError):
        analysis.quad_convolution(np.zeros(3), [np.arange(4)], analysis.ConvolutionParams(1.0))


def test_convolve_stack_uses_stored_times():
    spec = make_spec()
    grid = SpaceTimeGrid.build(2, 1.0, 0.25, 1.0, dt=0.25)
    stack = ps.SolutionStack.from_function(grid, spec, ps.SolverConfig(),
                                           lambda X, t: np.sin(X[..., 0]) + t * X[..., 1])
    prm = analysis.ConvolutionParams(0.2, "inf")
    got = analysis.convolve_stack(stack, prm)
    ref = brute_force_convolution(stack.levels, [stack.times, grid.axis, grid.axis], prm)
    assert got.shape == stack.levels.shape
    assert np.max(np.abs(got - ref)) <= 1e-12


def test_barrier_constant_default(default_spec):
    # 4 * 2 * (2 * 2.5 + 0.1)
    assert analysis.barrier_constant(default_spec) == pytest.approx(40.8)


def test_barriers_bracket_payoff_everywhere(default_spec):
    rng = np.random.default_rng(1)
    x = rng.uniform(-4, 4, size=(500, 2))
    gx = default_spec.payoff.evaluate(x)
    for y in rng.uniform(-2, 2, size=(5, 2)):
        for eps in (0.01, 0.25, 0.9):
            for t in (0.0, 0.5, 1.0):
                assert np.all(analysis.barrier_upper(y, eps, x, t, default_spec) >= gx)
                assert np.all(analysis.barrier_lower(y, eps, x, t, default_spec) <= gx)
        # at the anchor and terminal time the gap is only the 2 L_g sqrt(eps) cone offset
        up = analysis.barrier_upper(y, 0.01, y[None], 1.0, default_spec)[0]
        assert up - default_spec.payoff.evaluate(y[None])[0] == pytest.approx(0.4)


@pytest.mark.parametrize("eps", [0.0, 1.0, -0.5])
def test_barrier_eps_domain(default_spec, eps):
    with pytest.raises(DomainError):
        analysis.barrier_upper([0, 0], eps, [[0, 0]], 0.0, default_spec)


def test_doubling_barrier():
    assert analysis.doubling_barrier([1, 0], [0, 2], 0.5, 0.1, 1.0) == pytest.approx(0.5 + 2.0)
    with pytest.raises(DomainError):
        analysis.doubling_barrier([1, 0], [0, 2], 0.0, 0.1, 1.0)
    with pytest.raises(DomainError):
        analysis.doubling_barrier([1, 0], [0, 2], 0.5, -0.1, 1.0)


def test_holder_quotient_known_functions():
    spec = make_spec()
    grid = SpaceTimeGrid.build(2, 2.0, 0.125, 1.0, dt=1.0 / 64)
    cfg = ps.SolverConfig()
    lin = ps.SolutionStack.from_function(grid, spec, cfg, lambda X, t: 0.3 * X[..., 0])
    # spatial Lipschitz 0.3: the quotient d / d^(1/2) is largest at the longest shift inside radius 1
    assert analysis.holder_quotient(lin, max_shift=16) == pytest.approx(0.3 * np.sqrt(16 * 0.125))
    sq = ps.SolutionStack.from_function(grid, spec, cfg, lambda X, t: np.sqrt(np.abs(t - 0.5)) + 0 * X[..., 0])
    # exactly 1/2-Hölder in time with constant at most 1
    q = analysis.holder_quotient(sq, max_shift=16)
    assert 0.5 < q <= 1.0 + 1e-12
    with pytest.raises(DomainError):
        analysis.holder_quotient(lin, alpha=0.0)


def test_holder_quotient_of_heat_solve_is_moderate():
    spec = make_spec(p=ExponentField.sinusoidal(), mu=(0.1, 0.0), r=0.05, T=0.2)
    sc = ps.SolverConfig(operator_choice="limit", store_every=2)
    stack = ps.solve(spec, ps.make_grid(spec, 2.0, 0.1, sc), sc)
    assert 0.0 < analysis.holder_quotient(stack) < 2.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 5))
def test_sup_and_inf_gaps_coincide(seed, eps):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(5, 6))
    coords = [np.sort(rng.uniform(0, 1, 5)), np.sort(rng.uniform(0, 1, 6))]
    sup = analysis.quad_convolution(f, coords, analysis.ConvolutionParams(eps, "sup"))
    inf = analysis.quad_convolution(f, coords, analysis.ConvolutionParams(eps, "inf"))
    assert np.all(sup >= f) and np.all(inf <= f)
    assert np.max(sup - f) == pytest.approx(np.max(f - inf), abs=1e-12)


# ---------------------------------------------------------------- worked examples

@pytest.mark.parametrize("eps", [0.1, 0.05, 0.025])
def test_abs_value_sup_convolution_at_origin(eps):
    x = np.linspace(-1, 1, 4001)
    got = analysis.quad_convolution(np.abs(x), [x], analysis.ConvolutionParams(eps, "sup"))
    assert got[2000] == pytest.approx(eps / 2, abs=1e-6)
    assert got[2000] == pytest.approx(_brute_1d(np.abs(x), x, eps, "sup")[2000], abs=1e-15)


def test_monotone_in_eps():
    rng = np.random.default_rng(4)
    f = rng.normal(size=(12, 13))
    coords = [np.linspace(0, 1, 12), np.linspace(-1, 1, 13)]
    prev = None
    for eps in (0.1, 0.05, 0.025):
        cur = analysis.quad_convolution(f, coords, analysis.ConvolutionParams(eps, "sup"))
        if prev is not None:
            assert np.all(cur <= prev)
        prev = cur


def test_upper_barrier_dominates_builtin_payoffs_at_T():
    from tugofwar.core import PayoffField
    rng = np.random.default_rng(5)
    x = rng.uniform(-4, 4, size=(1000, 2))
    for g in (PayoffField.gaussian_bump(), PayoffField.smoothed_cone(), PayoffField.constant(0.7)):
        spec = make_spec(p=ExponentField.sinusoidal(), mu=(0.1, 0.0), payoff=g)
        for y in rng.uniform(-2, 2, size=(3, 2)):
            assert np.all(analysis.barrier_upper(y, 0.2, x, spec.T, spec) >= g.evaluate(x))


def test_doubling_barrier_examples():
    assert analysis.doubling_barrier([1, 2], [3, 4], 0.7, 0.0, 0.0) == 0.0
    assert analysis.doubling_barrier([0, 0], [0, 0], 0.5, 3.0, 2.0) == 4.0
    assert analysis.doubling_barrier([1, 0], [0, 0], 2.0, 1.0, 2.0) == 2.0
