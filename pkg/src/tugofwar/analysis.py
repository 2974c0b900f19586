"""Sup/inf-convolutions, barrier functions and Hölder quotients used in verification."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .core import ProblemSpec, lambda_bounds
from .errors import DomainError
from .pde_solver import SolutionStack

__all__ = [
    "ConvolutionParams",
    "quad_convolution",
    "convolve_stack",
    "barrier_constant",
    "barrier_upper",
    "barrier_lower",
    "doubling_barrier",
    "holder_quotient",
]


@dataclass(frozen=True)
class ConvolutionParams:
    eps: float
    direction: str = "sup"

    def __post_init__(self):
        if not self.eps > 0:
            raise DomainError("eps must be positive")
        if self.direction not in ("sup", "inf"):
            raise DomainError("direction must be 'sup' or 'inf'")


def quad_convolution(values: np.ndarray, coords: Sequence[np.ndarray], params: ConvolutionParams) -> np.ndarray:
    """Exact grid sup- or inf-convolution.

    ``sup_z f(z) - |x - z|^2 / (2 eps)`` (or ``inf_z f(z) + ...``) over all
    grid points, where ``coords[i]`` lists the increasing coordinates along
    axis ``i``. For a space-time stack pass the time coordinates as one of
    the axes. Each axis is one pass of the parabola lower envelope, so the
    cost is linear in the number of nodes.
    """
    f = np.asarray(values, dtype=float)
    if len(coords) != f.ndim:
        raise DomainError("need one coordinate array per axis")
    sign = -1.0 if params.direction == "sup" else 1.0
    work = sign * f
    inv2eps = 1.0 / (2.0 * params.eps)
    for axis, c in enumerate(coords):
        c = np.ascontiguousarray(np.asarray(c, dtype=float))
        if c.shape != (f.shape[axis],):
            raise DomainError(f"axis {axis} has {f.shape[axis]} nodes but {c.size} coordinates")
        moved = np.moveaxis(work, axis, -1)
        shp = moved.shape
        lines = np.ascontiguousarray(moved.reshape(-1, shp[-1]))
        work = np.moveaxis(_kernels.lower_envelope_lines(lines, c, inv2eps).reshape(shp), -1, axis)
    return sign * work


def convolve_stack(stack: SolutionStack, params: ConvolutionParams) -> np.ndarray:
    """Space-time convolution of all stored levels; axis 0 is time."""
    coords = [np.asarray(stack.times, dtype=float)[::-1]] + [stack.grid.axis] * stack.grid.n
    out = quad_convolution(stack.levels[::-1], coords, params)
    return out[::-1]


def barrier_constant(spec: ProblemSpec) -> float:
    """``A = 4 L_g (n Lambda + |mu|)``."""
    _, Lam = lambda_bounds(spec)
    return 4.0 * spec.lipschitz_g * (spec.n * Lam + float(np.linalg.norm(spec.mu_array)))


def _barrier_parts(y, eps01, x, t, spec):
    if not 0.0 < eps01 < 1.0:
        raise DomainError(f"eps must lie in (0, 1), got {eps01}")
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    gy = float(spec.payoff.evaluate(y[None])[0])
    dist2 = np.sum((x - y) ** 2, axis=-1)
    grow = barrier_constant(spec) / math.sqrt(eps01) * (spec.T - np.asarray(t, dtype=float))
    cone = 2.0 * spec.lipschitz_g * np.sqrt(dist2 + eps01)
    return gy, grow, cone


def barrier_upper(y, eps01: float, x, t, spec: ProblemSpec):
    """``g(y) + A (T - t) / sqrt(eps) + 2 L_g sqrt(|x - y|^2 + eps)``; vectorised over x."""
    gy, grow, cone = _barrier_parts(y, eps01, x, t, spec)
    return gy + grow + cone


def barrier_lower(y, eps01: float, x, t, spec: ProblemSpec):
    """``g(y) - A (T - t) / sqrt(eps) - 2 L_g sqrt(|x - y|^2 + eps)``; vectorised over x."""
    gy, grow, cone = _barrier_parts(y, eps01, x, t, spec)
    return gy - grow - cone


def doubling_barrier(x, y, t: float, delta: float, gamma: float) -> float:
    """``delta (|x|^2 + |y|^2) + gamma / t``."""
    if t == 0:
        raise DomainError("doubling barrier is singular at t = 0")
    if t < 0 or delta < 0 or gamma < 0:
        raise DomainError("need t > 0 and nonnegative delta, gamma")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(delta * (x @ x + y @ y) + gamma / t)


def holder_quotient(stack: SolutionStack, alpha: float = 0.5, radius: float | None = None,
                    max_shift: int = 16) -> float:
    """Largest parabolic Hölder quotient of the stored levels.

    ``|u(x,t) - u(y,s)| / d^alpha`` with ``d = max(|x - y|, |t - s|^(1/2))``,
    over axis-aligned spatial shifts and stored-level shifts of 1, 2, 4, ...
    up to ``max_shift`` nodes, restricted to ``|x|_inf <= radius`` (default
    half the box).
    """
    if not 0 < alpha <= 1:
        raise DomainError("alpha must lie in (0, 1]")
    grid = stack.grid
    radius = grid.half_width / 2 if radius is None else radius
    ax = grid.axis
    keep = np.nonzero(np.abs(ax) <= radius + 1e-12)[0]
    sl = slice(keep[0], keep[-1] + 1)
    u = stack.levels[(slice(None),) + (sl,) * grid.n]
    times = np.asarray(stack.times, dtype=float)
    best = 0.0
    shift = 1
    while shift <= max_shift:
        d = shift * grid.h
        for axis in range(1, grid.n + 1):
            if u.shape[axis] > shift:
                a = np.take(u, np.arange(shift, u.shape[axis]), axis=axis)
                b = np.take(u, np.arange(0, u.shape[axis] - shift), axis=axis)
                best = max(best, float(np.abs(a - b).max()) / d ** alpha)
        if len(times) > shift:
            gaps = np.abs(times[shift:] - times[:-shift])
            diff = np.abs(u[shift:] - u[:-shift]).reshape(len(gaps), -1).max(axis=1)
            best = max(best, float(np.max(diff / np.sqrt(gaps) ** alpha)))
        shift *= 2
    return best
