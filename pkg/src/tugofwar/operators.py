"""Phi, the Bellman-Isaacs operators F_m^-/F_m^+, the limiting operator and Pucci bounds.

Sign conventions follow the terminal value problems

    d_t u - F_m^-(x, t, u, Du, D^2u) = 0,      d_t u + F(x, t, u, Du, D^2u) = 0,

so ``F_m^-`` tends to ``-F`` as the intensity bound m grows.

Player naming is with respect to Phi: the *minimizer* picks (a, c) in the
outer infimum of ``F_m^-``; the *maximizer* picks (b, d). Since Phi is minus
the generator of the state process, the Phi-minimizer is the one pushing the
expected payoff up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from . import _kernels
from .core import ProblemSpec
from .errors import DomainError, PreconditionError
from .frames import orthogonal_complement_basis

__all__ = [
    "SecondOrderData",
    "Control",
    "ActionGrid",
    "diffusion_matrix",
    "sigma_matrix",
    "phi",
    "isaacs_lower",
    "isaacs_upper",
    "isaacs_fields",
    "isaacs_refined",
    "f_limit",
    "f_envelopes",
    "pucci",
]

_UNIT_TOL = 1e-12


def _unit(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-10:
        raise PreconditionError(f"{name} must be a unit vector (|{name}| = {np.linalg.norm(v)})")
    return v


@dataclass(frozen=True, eq=False)
class SecondOrderData:
    """Value, gradient and Hessian ``(xi, nu, M)`` fed to the operators."""

    xi: float
    nu: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float).reshape(-1)
        M = np.asarray(self.M, dtype=float)
        if M.shape != (nu.size, nu.size):
            raise PreconditionError(f"M has shape {M.shape}, expected {(nu.size, nu.size)}")
        if np.linalg.norm(M - M.T) > 1e-12 * (1.0 + np.linalg.norm(M)):
            raise PreconditionError("M must be symmetric")
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "xi", float(self.xi))

    @property
    def n(self) -> int:
        return self.nu.size


@dataclass(frozen=True, eq=False)
class Control:
    """One player's control: a unit direction and an intensity."""

    direction: np.ndarray
    intensity: float

    def __post_init__(self):
        object.__setattr__(self, "direction", _unit(self.direction, "direction"))
        if self.intensity < 0:
            raise PreconditionError("intensity must be nonnegative")
        object.__setattr__(self, "intensity", float(self.intensity))

    def admissible(self, m: float) -> bool:
        return 0.0 <= self.intensity <= m and abs(np.linalg.norm(self.direction) - 1.0) <= _UNIT_TOL


@lru_cache(maxsize=None)
def _pairs(n: int) -> np.ndarray:
    pairs = list(combinations(range(n), 2))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def _sphere_points(n: int, count: int) -> np.ndarray:
    if n == 2:
        theta = 2.0 * np.pi * np.arange(count) / count
        return np.stack([np.cos(theta), np.sin(theta)], axis=1)
    half = max(1, count // 2)
    if n == 3:
        # Fibonacci lattice on the upper half sphere, mirrored below.
        i = np.arange(half) + 0.5
        z = i / half
        phi_ = np.pi * (1.0 + 5.0 ** 0.5) * i
        rho = np.sqrt(1.0 - z * z)
        pts = np.stack([rho * np.cos(phi_), rho * np.sin(phi_), z], axis=1)
    else:
        from scipy.stats import norm, qmc

        u = qmc.Halton(d=n, scramble=False).random(half + 1)[1:]
        pts = norm.ppf(u)
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return np.concatenate([pts, -pts], axis=0)


@dataclass(frozen=True, eq=False)
class ActionGrid:
    """Finite discretisation of ``S^{n-1} x [0, m]``.

    Only directions are stored; intensities are optimised over ``{0, m}``.
    Queries with a nonzero gradient also consider ``+-nu/|nu|``, ahead of
    the stored directions.
    """

    m: float
    directions: np.ndarray
    resolution: str = ""

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.directions, dtype=float))
        if d.ndim != 2 or d.shape[0] == 0:
            raise PreconditionError("action grid needs at least one direction")
        if np.max(np.abs(np.linalg.norm(d, axis=1) - 1.0)) > _UNIT_TOL:
            raise PreconditionError("action grid directions must be unit vectors")
        if self.m < 0:
            raise PreconditionError("intensity bound m must be nonnegative")
        d.setflags(write=False)
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "m", float(self.m))

    @classmethod
    def uniform(cls, n: int, m: float, n_directions: int = 256) -> "ActionGrid":
        pts = _sphere_points(n, n_directions)
        label = f"uniform-angle:{n_directions}" if n == 2 else f"sphere-cover:{pts.shape[0]}"
        return cls(m, pts, label)

    @property
    def n(self) -> int:
        return self.directions.shape[1]

    def with_bound(self, m: float) -> "ActionGrid":
        return ActionGrid(m, self.directions, self.resolution)

    def augmented(self, nu) -> np.ndarray:
        """Direction list actually scanned for gradient ``nu``."""
        nu = np.asarray(nu, dtype=float)
        nrm = np.linalg.norm(nu)
        if nrm == 0:
            return np.array(self.directions)
        e = nu / nrm
        return np.concatenate([e[None], -e[None], self.directions], axis=0)


def diffusion_matrix(a, b, p_val: float) -> np.ndarray:
    """``(p - 2)/2 (a a^T + b b^T) + I`` for unit ``a``, ``b``."""
    a = _unit(a, "a")
    b = _unit(b, "b")
    return 0.5 * (p_val - 2.0) * (np.outer(a, a) + np.outer(b, b)) + np.eye(a.size)


def sigma_matrix(a, b, p_val: float) -> np.ndarray:
    """Noise loading ``[a sqrt(p-1), P_a, b sqrt(p-1), P_b]`` of shape ``(n, 2n)``."""
    if not p_val > 1.0:
        raise DomainError(f"p must exceed 1, got {p_val}")
    a = _unit(a, "a")
    b = _unit(b, "b")
    s = np.sqrt(p_val - 1.0)
    return np.concatenate([s * a[:, None], orthogonal_complement_basis(a),
                           s * b[:, None], orthogonal_complement_basis(b)], axis=1)


def phi(a, b, c: float, d: float, x, t: float, data: SecondOrderData, spec: ProblemSpec) -> float:
    """``-tr(A_ab M) - (c + d) <a + b, nu> - <mu, nu>`` with p evaluated at (x, t)."""
    if c < 0 or d < 0:
        raise PreconditionError("intensities must be nonnegative")
    p_val = float(spec.p_field.evaluate(np.asarray(x, dtype=float), t))
    A = diffusion_matrix(a, b, p_val)
    nu = data.nu
    return float(-np.trace(A @ data.M) - (c + d) * np.dot(np.asarray(a) + np.asarray(b), nu)
                 - np.dot(spec.mu_array, nu))


def _exact_inputs(nu: np.ndarray, M: np.ndarray):
    n = nu.shape[1]
    pairs = _pairs(n)
    diag = np.ascontiguousarray(np.diagonal(M, axis1=1, axis2=2))
    cross = np.ascontiguousarray(M[:, pairs[:, 0], pairs[:, 1]]) if len(pairs) else np.zeros((nu.shape[0], 0))
    return diag, cross, cross, pairs


def isaacs_fields(actions: ActionGrid, nu, M, p, xi, mu, r: float, *, lower=True, upper=True):
    """Batched ``F_m^-`` and ``F_m^+`` at N points.

    ``nu`` has shape (N, n), ``M`` (N, n, n), ``p`` and ``xi`` shape (N,).
    Returns ``(F_lower, F_upper, argmin control of F_lower, argmax control
    of F_upper)``, each control as ``(directions, intensities)``.
    """
    nu = np.ascontiguousarray(np.asarray(nu, dtype=float))
    M = np.asarray(M, dtype=float)
    diag, xpos, xneg, pairs = _exact_inputs(nu, M)
    base = np.trace(M, axis1=1, axis2=2) + nu @ np.asarray(mu, dtype=float)
    k = 0.5 * (np.asarray(p, dtype=float) - 2.0) * np.ones(nu.shape[0])
    v_low, v_up, a_low, c_low, b_up, d_up = _kernels.isaacs_kernel(
        diag, xpos, xneg, nu, k, base, actions.directions, pairs, actions.m, lower, upper)
    xi = np.asarray(xi, dtype=float)
    return -v_low + r * xi, -v_up + r * xi, (a_low, c_low), (b_up, d_up)


def _angle_search(fun, grid_angles, maximize, width):
    """Best of a grid scan and a bounded Brent refinement around the grid optimum."""
    from scipy.optimize import minimize_scalar

    sgn = -1.0 if maximize else 1.0
    vals = np.array([sgn * fun(th) for th in grid_angles])
    i = int(np.argmin(vals))
    th0 = grid_angles[i]
    res = minimize_scalar(lambda th: sgn * fun(th), bounds=(th0 - width, th0 + width), method="bounded",
                          options={"xatol": 1e-13, "maxiter": 500})
    best = min(vals[i], float(res.fun))
    return sgn * best


def isaacs_refined(nu, M, p_val: float, xi: float, mu, r: float, m: float,
                   n_directions: int = 256, lower: bool = True) -> float:
    """``F_m^-`` (or ``F_m^+``) for ``n = 2`` with every angular optimum refined.

    The separable structure needs four one-dimensional searches: the inner
    ``min_b w(b) + s <b, nu>`` for ``s in {0, m, 2m}`` and the outer search
    for each intensity. Each starts from the augmented uniform grid and is
    polished by a bounded Brent search within one grid spacing, which removes
    the grid error that otherwise grows with m.
    """
    nu = np.asarray(nu, dtype=float)
    M = np.asarray(M, dtype=float)
    if nu.shape != (2,):
        raise PreconditionError("angular refinement is implemented for n = 2")
    k = 0.5 * (p_val - 2.0)
    width = 2.0 * np.pi / n_directions
    angles = 2.0 * np.pi * np.arange(n_directions) / n_directions
    if np.any(nu != 0):
        phi0 = math.atan2(nu[1], nu[0])
        angles = np.concatenate([[phi0, phi0 + np.pi], angles])

    def w(th):
        a = np.array([math.cos(th), math.sin(th)])
        return k * float(a @ M @ a)

    def lv(th):
        return math.cos(th) * nu[0] + math.sin(th) * nu[1]

    inner = np.empty(3)
    for s in range(3):
        inner[s] = _angle_search(lambda th: w(th) + s * m * lv(th), angles, not lower, width)
    pick = min if lower else max
    outer = []
    for c in range(2):
        def f(th, c=c):
            return pick(w(th) + (c + d) * m * lv(th) + inner[c + d] for d in range(2))
        outer.append(_angle_search(f, angles, lower, width))
    v = max(outer) if lower else min(outer)
    base = float(np.trace(M) + np.asarray(mu, dtype=float) @ nu)
    return -(base + v) + r * xi


def _single(actions, x, t, data, spec, lower):
    if data.n != spec.n or actions.n != spec.n:
        raise PreconditionError("dimension mismatch between data, actions and spec")
    p_val = spec.p_field.evaluate(np.asarray(x, dtype=float), t)
    out = isaacs_fields(actions, data.nu[None], data.M[None], np.atleast_1d(p_val), [data.xi],
                        spec.mu_array, spec.r, lower=lower, upper=not lower)
    return float(out[0][0] if lower else out[1][0])


def isaacs_lower(actions: ActionGrid, x, t: float, data: SecondOrderData, spec: ProblemSpec) -> float:
    """``inf_{(a,c)} sup_{(b,d)} Phi + r xi`` over the action grid."""
    return _single(actions, x, t, data, spec, True)


def isaacs_upper(actions: ActionGrid, x, t: float, data: SecondOrderData, spec: ProblemSpec) -> float:
    """``sup_{(b,d)} inf_{(a,c)} Phi + r xi`` over the action grid."""
    return _single(actions, x, t, data, spec, False)


def f_limit(x, t: float, data: SecondOrderData, spec: ProblemSpec) -> float:
    """Normalized p(x,t)-Laplacian plus drift minus discount; needs ``nu != 0``."""
    nu = data.nu
    nn = float(nu @ nu)
    if nn == 0.0:
        raise DomainError("f_limit is undefined at nu = 0; use f_envelopes")
    p_val = float(spec.p_field.evaluate(np.asarray(x, dtype=float), t))
    return float((p_val - 2.0) * (nu @ data.M @ nu) / nn + np.trace(data.M)
                 + spec.mu_array @ nu - spec.r * data.xi)


def f_envelopes(x, t: float, data: SecondOrderData, spec: ProblemSpec) -> tuple[float, float]:
    """Lower and upper semicontinuous envelopes ``(F_*, F^*)`` at ``nu = 0``."""
    if np.any(data.nu != 0):
        raise DomainError("f_envelopes is only defined at nu = 0")
    p_val = float(spec.p_field.evaluate(np.asarray(x, dtype=float), t))
    lam = np.linalg.eigvalsh(data.M)
    lo, hi = (lam[0], lam[-1]) if p_val >= 2.0 else (lam[-1], lam[0])
    base = float(np.trace(data.M)) - spec.r * data.xi
    return base + (p_val - 2.0) * float(lo), base + (p_val - 2.0) * float(hi)


def pucci(M, lam: float, Lam: float, sign: str) -> float:
    """Pucci extremal operator ``P^+`` (``sign='plus'``) or ``P^-`` (``'minus'``)."""
    if not lam > 0:
        raise DomainError("lambda must be positive")
    if Lam < lam:
        raise DomainError("Lambda must be at least lambda")
    ev = np.linalg.eigvalsh(np.asarray(M, dtype=float))
    pos = ev[ev > 0].sum()
    neg = ev[ev < 0].sum()
    if sign == "plus":
        return float(Lam * pos + lam * neg)
    if sign == "minus":
        return float(lam * pos + Lam * neg)
    raise DomainError(f"sign must be 'plus' or 'minus', got {sign!r}")
