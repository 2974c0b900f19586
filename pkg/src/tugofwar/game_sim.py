"""Euler-Maruyama simulation of the controlled state process and Monte Carlo values.

The state follows

    dX = [mu + (c + d)(a + b)] ds + sigma(X, s; a, b) dW,

with ``W`` a 2n-dimensional Brownian motion. Policies are feedback maps
queried at decision epochs; between epochs controls are held. The minimizer
(Phi-minimizer, choosing ``(a, c)``) decides first and the maximizer answers
with the minimizer's current control in hand, matching the strategy
ordering of the lower value.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .core import ProblemSpec, interpolate_many
from .errors import ConfigurationError, DivergenceError, PreconditionError
from .frames import complement_apply, orthogonal_complement_basis
from .operators import ActionGrid, _pairs, sigma_matrix
from .pde_solver import SolutionStack

__all__ = [
    "orthogonal_complement_basis",
    "NoiseSource",
    "coarsen_normals",
    "Policy",
    "zero_intensity",
    "constant_control",
    "greedy_policy",
    "adversarial_best_response",
    "Trajectory",
    "em_step",
    "simulate",
    "simulate_batch",
    "monte_carlo_value",
    "export_trajectory",
    "write_summary",
]

ROLES = ("minimizer", "maximizer")


@dataclass(frozen=True)
class NoiseSource:
    """Counter-based normal stream for one path.

    The Philox key is ``(master_seed, path_index)``, so every path owns an
    independent stream and any path can be regenerated on its own.
    """

    master_seed: int
    path_index: int

    def __post_init__(self):
        if not 0 <= self.master_seed < 2 ** 64 or not 0 <= self.path_index < 2 ** 64:
            raise PreconditionError("seed and path index must fit in 64 unsigned bits")

    def generator(self) -> np.random.Generator:
        key = np.array([self.master_seed, self.path_index], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def normals(self, n_steps: int, dim: int) -> np.ndarray:
        """The first ``n_steps`` standard normal ``dim``-vectors of the stream."""
        return self.generator().standard_normal((n_steps, dim))


def coarsen_normals(z: np.ndarray) -> np.ndarray:
    """Normals for step ``2 dt`` driven by the same Brownian path as ``z`` at ``dt``."""
    z = np.asarray(z, dtype=float)
    if z.shape[-2] % 2:
        raise PreconditionError("need an even number of fine steps")
    return (z[..., 0::2, :] + z[..., 1::2, :]) / math.sqrt(2.0)


# ---------------------------------------------------------------- policies

@dataclass(eq=False)
class Policy:
    """Feedback policy emitting ``(direction, intensity)`` for a batch of states.

    ``k`` is the number of decision epochs on ``[t0, T]``; ``None`` means the
    policy decides at every integration step.
    """

    kind: str
    m: float
    k: Optional[int] = None
    role: str = "minimizer"
    stack: Optional[SolutionStack] = None
    control: Optional[tuple] = None
    actions: Optional[ActionGrid] = field(default=None, repr=False)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigurationError(f"role must be one of {ROLES}")
        if self.m < 0:
            raise ConfigurationError("m must be nonnegative")
        if self.k is not None and self.k < 1:
            raise ConfigurationError("k must be a positive number of epochs")

    @property
    def responds(self) -> bool:
        return self.kind == "adversarial_best_response"

    def act(self, X: np.ndarray, t: float, spec: ProblemSpec,
            opponent: Optional[tuple] = None) -> tuple[np.ndarray, np.ndarray]:
        B, n = X.shape
        if self.kind == "zero_intensity":
            dirs = np.zeros((B, n))
            dirs[:, 0] = 1.0
            out = dirs, np.zeros(B)
        elif self.kind == "constant_control":
            a, c = self.control
            out = np.tile(np.asarray(a, dtype=float), (B, 1)), np.full(B, float(c))
        elif self.kind == "greedy_from_solution":
            out = self._greedy(X, t, spec)
        elif self.kind == "adversarial_best_response":
            if opponent is None:
                raise ConfigurationError("best response needs the opponent's control")
            out = self._respond(X, t, spec, opponent)
        else:
            raise ConfigurationError(f"unknown policy kind {self.kind!r}")
        _check_admissible(out, self.m)
        return out

    def _local_data(self, X, t, spec):
        st = self.stack
        i = st.nearest_level(t)
        nu_f, M_f = st.derivative_fields(i)
        nu = np.ascontiguousarray(interpolate_many(nu_f, st.grid, X))
        M = interpolate_many(M_f, st.grid, X)
        n = X.shape[1]
        pairs = _pairs(n)
        diag = np.ascontiguousarray(np.diagonal(M, axis1=1, axis2=2))
        cross = np.ascontiguousarray(M[:, pairs[:, 0], pairs[:, 1]]).reshape(X.shape[0], len(pairs))
        p = np.broadcast_to(spec.p_field.evaluate(X, t), (X.shape[0],))
        k = np.ascontiguousarray(0.5 * (p - 2.0), dtype=float)
        return diag, cross, nu, k, pairs

    def _greedy(self, X, t, spec):
        diag, cross, nu, k, pairs = self._local_data(X, t, spec)
        base = np.zeros(X.shape[0])
        lower = self.role == "minimizer"
        _, _, a, c, b, d = _kernels.isaacs_kernel(diag, cross, cross, nu, k, base, self.actions.directions,
                                                  pairs, self.actions.m, lower, not lower)
        return (a, c) if lower else (b, d)

    def _respond(self, X, t, spec, opponent):
        diag, cross, nu, k, pairs = self._local_data(X, t, spec)
        gd, gi = opponent
        # The Phi-maximizer pushes the generator down; the Phi-minimizer up.
        return _kernels.response_kernel(diag, cross, cross, nu, k, self.actions.directions, pairs,
                                        self.actions.m, np.ascontiguousarray(gd, dtype=float),
                                        np.ascontiguousarray(gi, dtype=float), self.role == "maximizer")


def _check_admissible(control, m: float) -> None:
    dirs, ints = control
    if np.any(ints < 0) or np.any(ints > m * (1 + 1e-12)):
        raise PreconditionError("policy emitted an intensity outside [0, m]")
    if np.any(np.abs(np.linalg.norm(dirs, axis=1) - 1.0) > 1e-10):
        raise PreconditionError("policy emitted a non-unit direction")


def zero_intensity(n: int, k: Optional[int] = None, role: str = "minimizer") -> Policy:
    return Policy("zero_intensity", 0.0, k, role)


def constant_control(direction, intensity: float, m: float, k: Optional[int] = None,
                     role: str = "minimizer") -> Policy:
    a = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(a) - 1.0) > 1e-12 or not 0 <= intensity <= m:
        raise PreconditionError("constant control must be admissible")
    return Policy("constant_control", m, k, role, control=(a, float(intensity)))


def _bounded_stack(stack: SolutionStack, m: float) -> ActionGrid:
    cfg = stack.config
    if cfg.operator_choice not in ("lower_m", "upper_m"):
        raise ConfigurationError("policies need a stack solved with a bounded operator")
    if cfg.m != m:
        raise ConfigurationError(f"stack was solved with m={cfg.m}, policy asks for m={m}")
    return cfg.action_grid(stack.grid.n)


def greedy_policy(stack: SolutionStack, m: float, k: Optional[int], role: str = "minimizer") -> Policy:
    """Feedback control optimising the Isaacs operator on the stack's derivatives.

    The minimizer takes the outer argument of ``inf_{a,c} sup_{b,d} Phi``,
    the maximizer that of ``sup_{b,d} inf_{a,c} Phi``; both on the solver's
    direction grid with intensities in ``{0, m}``.
    """
    actions = _bounded_stack(stack, m)
    return Policy("greedy_from_solution", m, k, role, stack=stack, actions=actions)


def adversarial_best_response(stack: SolutionStack, m: float, k: Optional[int],
                              role: str = "maximizer") -> Policy:
    """Grid best reply to the opponent's current control."""
    actions = _bounded_stack(stack, m)
    return Policy("adversarial_best_response", m, k, role, stack=stack, actions=actions)


# ---------------------------------------------------------------- dynamics

@dataclass(eq=False)
class Trajectory:
    """One sample path with its controls and discounted terminal payoff."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    payoff: float

    def recompute_payoff(self, spec: ProblemSpec) -> float:
        disc = math.exp(-spec.r * (spec.T - self.times[0]))
        return float(disc * spec.payoff.evaluate(self.states[-1][None])[0])


def em_step(x, t: float, G, dt: float, z, spec: ProblemSpec) -> np.ndarray:
    """One Euler-Maruyama step for joint control ``G = (a, b, c, d)``."""
    a, b, c, d = G
    if dt <= 0:
        raise PreconditionError("dt must be positive")
    if c < 0 or d < 0:
        raise PreconditionError("intensities must be nonnegative")
    x = np.asarray(x, dtype=float)
    p_val = float(spec.p_field.evaluate(x, t))
    sig = sigma_matrix(a, b, p_val)
    drift = spec.mu_array + (c + d) * (np.asarray(a, dtype=float) + np.asarray(b, dtype=float))
    return x + drift * dt + math.sqrt(dt) * sig @ np.asarray(z, dtype=float)


def _em_batch(X, t, a, b, c, d, dt, Z, spec):
    n = X.shape[1]
    p = np.broadcast_to(spec.p_field.evaluate(X, t), (X.shape[0],))
    s = np.sqrt(p - 1.0)[:, None]
    noise = (s * a * Z[:, :1] + complement_apply(a, Z[:, 1:n])
             + s * b * Z[:, n:n + 1] + complement_apply(b, Z[:, n + 1:]))
    drift = spec.mu_array + (c + d)[:, None] * (a + b)
    return X + drift * dt + math.sqrt(dt) * noise


def _epoch_steps(policy: Policy, n_steps: int) -> np.ndarray:
    if policy.k is None:
        return np.ones(n_steps, dtype=bool)
    if n_steps % policy.k:
        raise ConfigurationError(f"{policy.k} decision epochs do not divide {n_steps} steps")
    mask = np.zeros(n_steps, dtype=bool)
    mask[:: n_steps // policy.k] = True
    return mask


def _n_steps(t0: float, T: float, dt: float) -> int:
    n = round((T - t0) / dt)
    if n < 1 or abs(n * dt - (T - t0)) > 1e-9 * max(1.0, T):
        raise PreconditionError(f"dt={dt} does not divide T - t0 = {T - t0}")
    return n


def simulate_batch(policy_min: Policy, policy_max: Policy, X0: np.ndarray, t0: float, dt: float,
                   Z: np.ndarray, spec: ProblemSpec, record: bool = False):
    """Advance a batch of paths with normals ``Z`` of shape ``(B, steps, 2n)``.

    Returns discounted payoffs, and with ``record`` also states ``(B, steps+1, n)``
    and controls ``(B, steps, 2n+2)`` ordered ``a, c, b, d``.
    """
    X = np.array(X0, dtype=float)
    B, n = X.shape
    steps = _n_steps(t0, spec.T, dt)
    if Z.shape != (B, steps, 2 * n):
        raise PreconditionError(f"normals must have shape {(B, steps, 2 * n)}")
    dmin = _epoch_steps(policy_min, steps)
    dmax = _epoch_steps(policy_max, steps)
    states = np.empty((B, steps + 1, n)) if record else None
    controls = np.empty((B, steps, 2 * n + 2)) if record else None
    if record:
        states[:, 0] = X
    a = c = b = d = None
    for i in range(steps):
        t = t0 + i * dt
        changed = False
        if dmin[i] or a is None:
            a, c = policy_min.act(X, t, spec)
            changed = True
        if dmax[i] or b is None or (changed and policy_max.responds):
            b, d = policy_max.act(X, t, spec, opponent=(a, c))
        X = _em_batch(X, t, a, b, c, d, dt, Z[:, i], spec)
        if not np.all(np.isfinite(X)):
            bad = int(np.argmax(~np.all(np.isfinite(X), axis=1)))
            exc = DivergenceError(f"non-finite state in batch row {bad} at step {i + 1}")
            exc.row = bad
            raise exc
        if record:
            states[:, i + 1] = X
            controls[:, i] = np.concatenate([a, c[:, None], b, d[:, None]], axis=1)
    disc = math.exp(-spec.r * (spec.T - t0))
    payoff = disc * spec.payoff.evaluate(X)
    if record:
        return payoff, states, controls
    return payoff


def simulate(policy_min: Policy, policy_max: Policy, x0, t0: float, dt: float,
             noise: NoiseSource, spec: ProblemSpec) -> Trajectory:
    """Single path driven by ``noise``; records states and controls."""
    x0 = np.asarray(x0, dtype=float)
    steps = _n_steps(t0, spec.T, dt)
    Z = noise.normals(steps, 2 * spec.n)[None]
    payoff, states, controls = simulate_batch(policy_min, policy_max, x0[None], t0, dt, Z, spec, record=True)
    times = t0 + dt * np.arange(steps + 1)
    return Trajectory(times, states[0], controls[0], float(payoff[0]))


def monte_carlo_value(policy_min: Policy, policy_max: Policy, x0, t0: float, n_paths: int, dt: float,
                      master_seed: int, spec: ProblemSpec, chunk: int = 500) -> tuple[float, float]:
    """Mean and standard error of the discounted payoff over ``n_paths`` paths.

    Path ``j`` uses ``NoiseSource(master_seed, j)``; payoffs are reduced in
    path order, so the result does not depend on ``chunk``.
    """
    if n_paths < 2:
        raise PreconditionError("n_paths must be at least 2")
    x0 = np.asarray(x0, dtype=float)
    steps = _n_steps(t0, spec.T, dt)
    dim = 2 * spec.n
    payoffs = np.empty(n_paths)
    for start in range(0, n_paths, chunk):
        stop = min(n_paths, start + chunk)
        Z = np.stack([NoiseSource(master_seed, j).normals(steps, dim) for j in range(start, stop)])
        X0 = np.tile(x0, (stop - start, 1))
        try:
            payoffs[start:stop] = simulate_batch(policy_min, policy_max, X0, t0, dt, Z, spec)
        except DivergenceError as exc:
            raise DivergenceError(f"path {start + exc.row}: {exc}") from exc
    mean = float(np.sum(payoffs) / n_paths)
    stderr = float(np.std(payoffs, ddof=1) / math.sqrt(n_paths))
    return mean, stderr


def export_trajectory(traj: Trajectory, path: str) -> str:
    """CSV with columns ``t, x1..xn, a1..an, c, b1..bn, d``; controls blank on the last row."""
    n = traj.states.shape[1]
    cols = (["t"] + [f"x{i + 1}" for i in range(n)] + [f"a{i + 1}" for i in range(n)] + ["c"]
            + [f"b{i + 1}" for i in range(n)] + ["d"])
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(f"# payoff={traj.payoff!r} columns: {','.join(cols)}\n{','.join(cols)}\n")
        for i, t in enumerate(traj.times):
            row = [t, *traj.states[i]]
            if i < len(traj.controls):
                row += list(traj.controls[i])
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
            else:
                fh.write(",".join(repr(float(v)) for v in row) + "," * (2 * n + 2) + "\n")
    return path


def write_summary(path: str, mean: float, stderr: float, n_paths: int, seed: int, **extra) -> str:
    payload = {"mean": mean, "stderr": stderr, "n_paths": n_paths, "seed": seed, **extra}
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
