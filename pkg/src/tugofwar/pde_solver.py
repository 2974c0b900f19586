"""Explicit backward-in-time finite differences for the three terminal value problems.

Marching from the terminal level:

* ``lower_m`` / ``upper_m``:  ``u(t - dt) = u(t) - dt * F_m^-/+ (x, t, u, Du, D^2u)``
* ``limit``:                  ``u(t - dt) = u(t) + dt * F(x, t, u, Du, D^2u)``

Gradients are central differences. Inside the operators every directional
second derivative ``k a^T D^2u a`` takes its mixed terms from the one-sided
diagonal stencil matching the sign of ``k a_i a_j``; together with the
``I/2`` share of the identity this keeps each player's stencil weights
nonnegative for ``n = 2`` and ``p`` roughly in ``[1.2, 6]``. The plain
central Hessian (exact on quadratics) is what :func:`discrete_derivatives`
reports.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from functools import cached_property
from itertools import product
from typing import Sequence

import numpy as np

from . import _kernels
from .core import GridFunction, ProblemSpec, SpaceTimeGrid, lambda_bounds
from .errors import ConfigurationError, DivergenceError, MarginError
from .operators import ActionGrid, SecondOrderData, _pairs

__all__ = [
    "SolverConfig",
    "SolutionStack",
    "stable_dt",
    "make_grid",
    "solve",
    "discrete_derivatives",
    "level_stencils",
    "level_operator",
    "residual",
    "residual_field",
    "export_stack",
]

logger = logging.getLogger(__name__)

OPERATORS = ("lower_m", "upper_m", "limit")
BOUNDARY_POLICIES = ("clamp_to_g", "barrier_box")
ENVELOPE_SELECTIONS = ("midpoint", "lower", "upper")


@dataclass(frozen=True)
class SolverConfig:
    operator_choice: str = "lower_m"
    m: float = 10.0
    grad_epsilon: float = 0.1
    boundary_policy: str = "clamp_to_g"
    cfl_safety: float = 0.9
    n_directions: int = 256
    store_every: int = 1
    envelope_selection: str = "midpoint"

    def __post_init__(self):
        if self.operator_choice not in OPERATORS:
            raise ConfigurationError(f"operator_choice must be one of {OPERATORS}")
        if self.boundary_policy not in BOUNDARY_POLICIES:
            raise ConfigurationError(f"boundary_policy must be one of {BOUNDARY_POLICIES}")
        if not self.grad_epsilon > 0:
            raise ConfigurationError("grad_epsilon must be positive")
        if not 0 < self.cfl_safety < 1:
            raise ConfigurationError("cfl_safety must lie in (0, 1)")
        if self.m < 0:
            raise ConfigurationError("m must be nonnegative")
        if self.store_every < 1:
            raise ConfigurationError("store_every must be at least 1")
        if self.envelope_selection not in ENVELOPE_SELECTIONS:
            raise ConfigurationError(f"envelope_selection must be one of {ENVELOPE_SELECTIONS}")

    def action_grid(self, n: int) -> ActionGrid:
        return ActionGrid.uniform(n, self.m, self.n_directions)


def stable_dt(spec: ProblemSpec, h: float) -> float:
    """Largest explicit step keeping the centre weight nonnegative.

    The outflow of every controlled stencil is at most ``2 tr(A) / h^2`` with
    ``tr(A) = n + p - 2``; the discount adds ``r``. Central drift terms do
    not enter the centre weight.
    """
    tr_max = spec.n + spec.p_field.p_max - 2.0
    return h * h / (2.0 * tr_max + spec.r * h * h)


def make_grid(spec: ProblemSpec, half_width: float, h: float, config: SolverConfig,
              dt: float | None = None) -> SpaceTimeGrid:
    """Grid whose time step is ``dt`` or the largest safe step dividing ``T``."""
    if dt is None:
        return SpaceTimeGrid.build(spec.n, half_width, h, spec.T, max_dt=config.cfl_safety * stable_dt(spec, h))
    return SpaceTimeGrid.build(spec.n, half_width, h, spec.T, dt=dt)


def monotonicity_report(spec: ProblemSpec, h: float, config: SolverConfig) -> dict:
    """Worst-case stencil margins over the action grid and the p range.

    ``axis_margin`` is the smallest axis-neighbour diffusion weight (times h^2)
    of one player's stencil; ``peclet`` compares the largest central drift
    with twice the combined margin. ``peclet <= 1`` certifies nonnegative
    weights for every control pair.
    """
    dirs = config.action_grid(spec.n).directions
    worst = np.inf
    for p_val in (spec.p_field.p_min, spec.p_field.p_max):
        k = 0.5 * (p_val - 2.0)
        absd = np.abs(dirs)
        off = absd * (absd.sum(axis=1, keepdims=True) - absd)
        margin = 0.5 + k * dirs ** 2 - abs(k) * off
        worst = min(worst, float(margin.min()))
    if config.operator_choice == "limit":
        drift = float(np.max(np.abs(spec.mu_array)))
    else:
        drift = float(np.max(np.abs(spec.mu_array))) + 4.0 * config.m
    combined = 2.0 * worst
    peclet = drift * h / (2.0 * combined) if combined > 0 else math.inf
    return {"axis_margin": worst, "peclet": peclet, "max_drift": drift}


# ---------------------------------------------------------------- stencils

def _interior(n: int, offset: Sequence[int]):
    return tuple(slice(1 + o, (-1 + o) or None) for o in offset)


def level_stencils(u: np.ndarray, h: float) -> dict:
    """Central-difference data on interior nodes, flattened to (N_int, ...).

    Keys: ``nu`` (N, n), ``diag`` (N, n), ``xstd``/``xpos``/``xneg`` (N, P) for
    the pairs ``i < j``. ``xpos`` is the mixed stencil through the (+,+)/(-,-)
    diagonal, ``xneg`` the one through (+,-)/(-,+); both are exact on
    quadratics and average to ``xstd``.
    """
    n = u.ndim
    h2 = h * h
    zero = [0] * n

    def sh(*pairs):
        off = list(zero)
        for axis, step in pairs:
            off[axis] += step
        return u[_interior(n, off)]

    c = u[_interior(n, zero)]
    nu = np.empty(c.shape + (n,))
    diag = np.empty(c.shape + (n,))
    plus = [sh((i, 1)) for i in range(n)]
    minus = [sh((i, -1)) for i in range(n)]
    for i in range(n):
        nu[..., i] = (plus[i] - minus[i]) / (2.0 * h)
        diag[..., i] = (plus[i] - 2.0 * c + minus[i]) / h2
    pairs = _pairs(n)
    P = len(pairs)
    xstd = np.empty(c.shape + (P,))
    xpos = np.empty(c.shape + (P,))
    xneg = np.empty(c.shape + (P,))
    for q, (i, j) in enumerate(pairs):
        pp = sh((i, 1), (j, 1))
        mm = sh((i, -1), (j, -1))
        pm = sh((i, 1), (j, -1))
        mp = sh((i, -1), (j, 1))
        axis_sum = plus[i] + minus[i] + plus[j] + minus[j]
        xstd[..., q] = (pp + mm - pm - mp) / (4.0 * h2)
        xpos[..., q] = (pp + mm + 2.0 * c - axis_sum) / (2.0 * h2)
        xneg[..., q] = -(pm + mp + 2.0 * c - axis_sum) / (2.0 * h2)
    flat = c.size
    return {
        "u": c.reshape(flat),
        "nu": nu.reshape(flat, n),
        "diag": diag.reshape(flat, n),
        "xstd": xstd.reshape(flat, P),
        "xpos": xpos.reshape(flat, P),
        "xneg": xneg.reshape(flat, P),
    }


def _hessian(diag: np.ndarray, cross: np.ndarray, n: int) -> np.ndarray:
    M = np.zeros(diag.shape[:-1] + (n, n))
    for i in range(n):
        M[..., i, i] = diag[..., i]
    for q, (i, j) in enumerate(_pairs(n)):
        M[..., i, j] = cross[..., q]
        M[..., j, i] = cross[..., q]
    return M


def discrete_derivatives(level: GridFunction, node: Sequence[int]) -> SecondOrderData:
    """Central gradient and Hessian of a grid function at an interior node."""
    node = tuple(int(i) for i in node)
    N = level.grid.nodes_per_axis
    n = level.grid.n
    if len(node) != n:
        raise MarginError(f"node must have {n} indices")
    if any(i < 1 or i > N - 2 for i in node):
        raise MarginError(f"node {node} lacks a one-node margin")
    patch = level.values[tuple(slice(i - 1, i + 2) for i in node)]
    st = level_stencils(patch, level.grid.h)
    return SecondOrderData(st["u"][0], st["nu"][0], _hessian(st["diag"][0], st["xstd"][0], n))


def _directional(dirs: np.ndarray, st: dict, k: np.ndarray) -> np.ndarray:
    """``a^T M a`` with mixed terms from the sign-matched one-sided stencil."""
    q = np.sum(dirs ** 2 * st["diag"], axis=1)
    for col, (i, j) in enumerate(_pairs(dirs.shape[1])):
        prod = dirs[:, i] * dirs[:, j]
        cross = np.where(k * prod >= 0.0, st["xpos"][:, col], st["xneg"][:, col])
        q = q + 2.0 * prod * cross
    return q


def level_operator(u: np.ndarray, t: float, grid: SpaceTimeGrid, spec: ProblemSpec,
                   config: SolverConfig, actions: ActionGrid | None = None,
                   points: np.ndarray | None = None) -> np.ndarray:
    """Operator value on interior nodes, signed as in the equation.

    Returns ``F_m^-`` or ``F_m^+`` for the bounded choices and ``F`` for the
    limit; the caller steps with ``-dt * F_m`` or ``+dt * F`` respectively.
    """
    n = grid.n
    st = level_stencils(u, grid.h)
    if points is None:
        points = grid.points()[_interior(n, [0] * n)].reshape(-1, n)
    p = np.broadcast_to(spec.p_field.evaluate(points, t), st["u"].shape)
    k = 0.5 * (p - 2.0)
    mu = spec.mu_array
    trace = np.sum(st["diag"], axis=1)
    drift = st["nu"] @ mu
    if config.operator_choice == "limit":
        nu = st["nu"]
        nrm = np.sqrt(np.sum(nu * nu, axis=1))
        flat = nrm <= config.grad_epsilon * grid.h
        e = nu / np.where(flat, 1.0, nrm)[:, None]
        val = trace + 2.0 * k * _directional(e, st, k)
        if np.any(flat):
            val[flat] = _envelope_value(st, k, flat, n, config.envelope_selection)
        return val + drift - spec.r * st["u"]
    if actions is None:
        actions = config.action_grid(n)
    dirs = actions.directions
    pairs = _pairs(n)
    v = _kernels.isaacs_values(
        np.ascontiguousarray(st["diag"]), np.ascontiguousarray(st["xpos"]),
        np.ascontiguousarray(st["xneg"]), np.ascontiguousarray(st["nu"]),
        np.ascontiguousarray(k, dtype=float), trace + drift, dirs,
        _kernels.direction_features(dirs, pairs), pairs, actions.m, config.operator_choice == "lower_m")
    return -v + spec.r * st["u"]


def _envelope_value(st: dict, k: np.ndarray, mask: np.ndarray, n: int, selection: str) -> np.ndarray:
    """``tr M + (p - 2) lambda`` with lambda the midpoint of the extreme eigenvalues, or the F_*/F^* choice."""
    diag = st["diag"][mask]
    tr = diag.sum(axis=1)
    km = k[mask]
    if n == 2 and selection == "midpoint":
        return tr + km * tr
    ev = np.linalg.eigvalsh(_hessian(diag, st["xstd"][mask], n))
    lo, hi = 2.0 * km * ev[:, 0], 2.0 * km * ev[:, -1]
    if selection == "lower":
        return tr + np.minimum(lo, hi)
    if selection == "upper":
        return tr + np.maximum(lo, hi)
    return tr + 0.5 * (lo + hi)


def _boundary_mask(shape) -> np.ndarray:
    mask = np.ones(shape, dtype=bool)
    mask[tuple(slice(1, -1) for _ in shape)] = False
    return mask


def boundary_values(points: np.ndarray, t: float, spec: ProblemSpec, policy: str) -> np.ndarray:
    """Dirichlet data on the lateral boundary shell at time ``t``."""
    g = spec.payoff.evaluate(points)
    disc = math.exp(-spec.r * (spec.T - t))
    if policy == "clamp_to_g":
        return g * disc
    # Upper barrier anchored at y = x with the best admissible eps, capped by
    # the constant supersolution sup g * exp(-r (T - t)).
    _, Lam = lambda_bounds(spec)
    A = 4.0 * spec.lipschitz_g * (spec.n * Lam + float(np.linalg.norm(spec.mu_array)))
    tau = spec.T - t
    if tau <= 0:
        return g
    eps = min(max(A * tau / (2.0 * spec.lipschitz_g), 1e-12), 1.0 - 1e-12)
    bar = g + A * tau / math.sqrt(eps) + 2.0 * spec.lipschitz_g * math.sqrt(eps)
    return np.minimum(bar, spec.payoff.sup * disc)


@dataclass(eq=False)
class SolutionStack:
    """Stored time levels of a solve, terminal level first.

    ``levels[i]`` holds the full grid at solver level ``level_index[i]``,
    i.e. time ``times[i]``.
    """

    grid: SpaceTimeGrid
    spec: ProblemSpec
    config: SolverConfig
    levels: np.ndarray
    level_index: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.grid.horizon - self.level_index * self.grid.dt

    def __len__(self) -> int:
        return self.levels.shape[0]

    def level(self, i: int) -> GridFunction:
        return GridFunction(self.grid, self.levels[i], float(self.times[i]))

    def nearest_level(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))

    def at_time(self, t: float) -> np.ndarray:
        return self.levels[self.nearest_level(t)]

    @cached_property
    def _derivative_cache(self) -> dict:
        return {}

    def derivative_fields(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Gradient and Hessian on every node of stored level ``i``.

        Interior nodes use the central stencils; boundary nodes copy the
        nearest interior value.
        """
        cache = self._derivative_cache
        if i not in cache:
            n = self.grid.n
            st = level_stencils(self.levels[i], self.grid.h)
            shp = tuple(s - 2 for s in self.grid.shape)
            nu = st["nu"].reshape(shp + (n,))
            M = _hessian(st["diag"], st["xstd"], n).reshape(shp + (n, n))
            pad = [(1, 1)] * n
            nu = np.pad(nu, pad + [(0, 0)], mode="edge")
            M = np.pad(M, pad + [(0, 0), (0, 0)], mode="edge")
            if len(cache) > 64:
                cache.clear()
            cache[i] = (nu, M)
        return cache[i]

    @classmethod
    def from_function(cls, grid: SpaceTimeGrid, spec: ProblemSpec, config: SolverConfig,
                      func, level_index: Sequence[int] | None = None) -> "SolutionStack":
        """Sample ``func(points, t)`` at solver levels (default: all)."""
        if level_index is None:
            level_index = np.arange(grid.n_t + 1)
        level_index = np.asarray(level_index, dtype=int)
        pts = grid.points()
        levels = np.stack([np.asarray(func(pts, grid.level_time(j)), dtype=float) for j in level_index])
        return cls(grid, spec, config, levels, level_index, {"source": "sampled"})


def solve(spec: ProblemSpec, grid: SpaceTimeGrid, config: SolverConfig) -> SolutionStack:
    """March the chosen terminal value problem from ``T`` down to 0."""
    if grid.n != spec.n:
        raise ConfigurationError("grid and spec dimensions differ")
    if abs(grid.horizon - spec.T) > 1e-12 * spec.T:
        raise ConfigurationError("grid horizon differs from T")
    limit = stable_dt(spec, grid.h)
    if grid.dt > limit * (1 + 1e-12):
        raise ConfigurationError(
            f"dt={grid.dt:.6g} violates the stability bound {limit:.6g} for h={grid.h}")
    mono = monotonicity_report(spec, grid.h, config)
    if mono["axis_margin"] < 0 or mono["peclet"] > 1:
        logger.info("stencil monotonicity not certified for every control: %s", mono)

    n = grid.n
    pts = grid.points()
    inner = _interior(n, [0] * n)
    inner_pts = pts[inner].reshape(-1, n)
    bmask = _boundary_mask(grid.shape)
    bpts = pts[bmask]
    actions = None if config.operator_choice == "limit" else config.action_grid(n)
    sign = 1.0 if config.operator_choice == "limit" else -1.0

    u = np.asarray(spec.payoff.evaluate(pts), dtype=float)
    stored = [u.copy()]
    index = [0]
    dt = grid.dt
    for j in range(grid.n_t):
        t = grid.level_time(j)
        op = level_operator(u, t, grid, spec, config, actions, inner_pts)
        new = np.empty_like(u)
        new[inner] = (u[inner].reshape(-1) + sign * dt * op).reshape(u[inner].shape)
        new[bmask] = boundary_values(bpts, grid.level_time(j + 1), spec, config.boundary_policy)
        if not np.all(np.isfinite(new)):
            raise DivergenceError(f"non-finite values at level {j + 1} (t={grid.level_time(j + 1):.6g})")
        u = new
        if (j + 1) % config.store_every == 0 or j + 1 == grid.n_t:
            stored.append(u.copy())
            index.append(j + 1)
    meta = {
        "achieved_cfl": grid.dt / limit,
        "stable_dt": limit,
        "monotonicity": mono,
    }
    return SolutionStack(grid, spec, config, np.stack(stored), np.asarray(index), meta)


def residual_field(stack: SolutionStack, i: int) -> np.ndarray:
    """Discrete residual on the interior of stored level ``i >= 1``.

    ``(u_{i-1} - u_i) / gap - F_m(level i-1)`` for the bounded operators and
    ``(u_{i-1} - u_i) / gap + F(level i-1)`` for the limit, where ``gap`` is
    the time between the two stored levels.
    """
    if not 1 <= i < len(stack):
        raise MarginError(f"stored level {i} has no later neighbour")
    grid = stack.grid
    n = grid.n
    inner = _interior(n, [0] * n)
    gap = (stack.level_index[i] - stack.level_index[i - 1]) * grid.dt
    dtu = (stack.levels[i - 1][inner] - stack.levels[i][inner]).reshape(-1) / gap
    op = level_operator(stack.levels[i - 1], float(stack.times[i - 1]), grid, stack.spec, stack.config)
    if stack.config.operator_choice == "limit":
        res = dtu + op
    else:
        res = dtu - op
    return res.reshape(tuple(s - 2 for s in grid.shape))


def residual(stack: SolutionStack, node: Sequence[int], i: int) -> float:
    """Residual at one interior node of stored level ``i``."""
    N = stack.grid.nodes_per_axis
    if any(k < 1 or k > N - 2 for k in node):
        raise MarginError(f"node {tuple(node)} lacks a one-node margin")
    field_ = residual_field(stack, i)
    return float(field_[tuple(int(k) - 1 for k in node)])


def export_stack(stack: SolutionStack, out_dir: str, prefix: str = "solution",
                 extra: dict | None = None) -> list[str]:
    """One CSV per stored level plus a JSON sidecar; returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    n = stack.grid.n
    pts = stack.grid.points().reshape(-1, n)
    cols = ",".join([f"x{i + 1}" for i in range(n)] + ["value"])
    paths = []
    width = len(str(stack.grid.n_t))
    for i in range(len(stack)):
        path = os.path.join(out_dir, f"{prefix}_level{stack.level_index[i]:0{width}d}.csv")
        vals = stack.levels[i].reshape(-1)
        with open(path, "w") as fh:
            fh.write(f"# t={stack.times[i]!r} columns: {cols}\n{cols}\n")
            for row, v in zip(pts, vals):
                fh.write(",".join(repr(float(c)) for c in row) + f",{float(v)!r}\n")
        paths.append(path)
    side = os.path.join(out_dir, f"{prefix}.json")
    payload = {
        "spec": stack.spec.describe(),
        "grid": stack.grid.describe(),
        "config": asdict(stack.config),
        "stored_levels": [int(v) for v in stack.level_index],
        "metadata": _jsonable(stack.metadata),
    }
    if extra:
        payload.update(_jsonable(extra))
    with open(side, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(side)
    return paths


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj
