"""Problem instances, scalar fields, grids and validation.

Everything here is immutable after construction. The fields are small
dataclasses with a ``kind`` selector so that an instance can be echoed into
JSON sidecars and rebuilt from a plain-text config.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, ExtensionError

__all__ = [
    "ExponentField",
    "PayoffField",
    "ProblemSpec",
    "SpaceTimeGrid",
    "GridFunction",
    "RunConfig",
    "CONFIG_SCHEMA",
    "validate_spec",
    "interpolate",
    "interpolate_many",
    "lambda_bounds",
]

# Deterministic probing used by validate_spec.
PROBE_SEED = 20240611
PROBE_COUNT = 4000
PROBE_RADIUS = 10.0


@dataclass(frozen=True)
class ExponentField:
    """Exponent field p(x, t) with declared bounds and Lipschitz constant.

    Built-in kinds:

    ``constant``
        ``p = value``.
    ``sinusoidal``
        ``p = base + amp * sin(x_1) * cos(t)``; Lipschitz constant ``|amp|``.
    ``custom``
        ``func(x, t)`` supplied by the caller together with declared bounds.
    """

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)
    func: Callable[[np.ndarray, Any], np.ndarray] | None = field(default=None, compare=False)
    declared_min: float | None = None
    declared_max: float | None = None
    declared_lipschitz: float | None = None

    @classmethod
    def constant(cls, value: float) -> "ExponentField":
        return cls("constant", {"value": float(value)})

    @classmethod
    def sinusoidal(cls, base: float = 3.0, amp: float = 0.5) -> "ExponentField":
        return cls("sinusoidal", {"base": float(base), "amp": float(amp)})

    @classmethod
    def custom(cls, func, p_min: float, p_max: float, lipschitz_p: float) -> "ExponentField":
        return cls("custom", {}, func, p_min, p_max, lipschitz_p)

    def evaluate(self, x, t) -> np.ndarray:
        """Evaluate p at points ``x`` (shape ``(..., n)``) and times ``t``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(np.broadcast_shapes(x.shape[:-1], np.shape(t)), self.params["value"])
        if self.kind == "sinusoidal":
            return self.params["base"] + self.params["amp"] * np.sin(x[..., 0]) * np.cos(t)
        if self.kind == "custom":
            return np.asarray(self.func(x, t), dtype=float)
        raise ConfigurationError(f"unknown exponent field kind {self.kind!r}")

    @property
    def p_min(self) -> float:
        if self.kind == "constant":
            return self.params["value"]
        if self.kind == "sinusoidal":
            return self.params["base"] - abs(self.params["amp"])
        return float(self.declared_min)

    @property
    def p_max(self) -> float:
        if self.kind == "constant":
            return self.params["value"]
        if self.kind == "sinusoidal":
            return self.params["base"] + abs(self.params["amp"])
        return float(self.declared_max)

    @property
    def lipschitz_p(self) -> float:
        if self.kind == "constant":
            return 0.0
        if self.kind == "sinusoidal":
            return abs(self.params["amp"])
        return float(self.declared_lipschitz)

    def describe(self) -> dict:
        return {"kind": self.kind, **dict(self.params),
                "p_min": self.p_min, "p_max": self.p_max, "lipschitz_p": self.lipschitz_p}


@dataclass(frozen=True)
class PayoffField:
    """Terminal payoff g.

    Built-in kinds, all positive, bounded and Lipschitz:

    ``gaussian_bump``
        ``base + amp * exp(-|x|^2 / (2 width^2))``
    ``smoothed_cone``
        ``base + amp * max(0, 1 - sqrt(|x|^2 + smoothing^2) / radius)``
    ``constant``
        ``value``
    """

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)
    func: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    declared_sup: float | None = None
    declared_lipschitz: float | None = None

    @classmethod
    def gaussian_bump(cls, base: float = 0.1, amp: float = 1.0, width: float = 1.0) -> "PayoffField":
        return cls("gaussian_bump", {"base": float(base), "amp": float(amp), "width": float(width)})

    @classmethod
    def smoothed_cone(cls, base: float = 0.1, amp: float = 1.0, radius: float = 2.0,
                      smoothing: float = 0.25) -> "PayoffField":
        return cls("smoothed_cone", {"base": float(base), "amp": float(amp),
                                     "radius": float(radius), "smoothing": float(smoothing)})

    @classmethod
    def constant(cls, value: float) -> "PayoffField":
        return cls("constant", {"value": float(value)})

    @classmethod
    def custom(cls, func, sup: float, lipschitz: float) -> "PayoffField":
        return cls("custom", {}, func, sup, lipschitz)

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        prm = self.params
        if self.kind == "gaussian_bump":
            r2 = np.sum(x * x, axis=-1)
            return prm["base"] + prm["amp"] * np.exp(-r2 / (2.0 * prm["width"] ** 2))
        if self.kind == "smoothed_cone":
            rho = np.sqrt(np.sum(x * x, axis=-1) + prm["smoothing"] ** 2)
            return prm["base"] + prm["amp"] * np.maximum(0.0, 1.0 - rho / prm["radius"])
        if self.kind == "constant":
            return np.full(x.shape[:-1], prm["value"])
        if self.kind == "custom":
            return np.asarray(self.func(x), dtype=float)
        raise ConfigurationError(f"unknown payoff kind {self.kind!r}")

    @property
    def sup(self) -> float:
        prm = self.params
        if self.kind == "gaussian_bump":
            return prm["base"] + max(prm["amp"], 0.0)
        if self.kind == "smoothed_cone":
            return prm["base"] + max(prm["amp"], 0.0) * max(0.0, 1.0 - prm["smoothing"] / prm["radius"])
        if self.kind == "constant":
            return prm["value"]
        return float(self.declared_sup)

    @property
    def lipschitz(self) -> float:
        prm = self.params
        if self.kind == "gaussian_bump":
            return abs(prm["amp"]) / prm["width"] * math.exp(-0.5)
        if self.kind == "smoothed_cone":
            return abs(prm["amp"]) / prm["radius"]
        if self.kind == "constant":
            return 0.0
        return float(self.declared_lipschitz)

    def shifted(self, delta: float) -> "PayoffField":
        """Return the payoff ``g + delta`` (same kind, raised floor)."""
        if self.kind == "constant":
            return PayoffField.constant(self.params["value"] + delta)
        if self.kind in ("gaussian_bump", "smoothed_cone"):
            prm = dict(self.params)
            prm["base"] += delta
            return PayoffField(self.kind, prm)
        base = self
        return PayoffField.custom(lambda x: base.evaluate(x) + delta,
                                  base.sup + delta, base.lipschitz)

    def describe(self) -> dict:
        return {"kind": self.kind, **dict(self.params), "sup": self.sup, "lipschitz": self.lipschitz}


@dataclass(frozen=True)
class ProblemSpec:
    """A full instance of the terminal value problem / game."""

    n: int
    T: float
    mu: tuple[float, ...]
    r: float
    p_field: ExponentField
    payoff: PayoffField
    lipschitz_g: float

    def __post_init__(self):
        object.__setattr__(self, "mu", tuple(float(v) for v in self.mu))

    @property
    def mu_array(self) -> np.ndarray:
        return np.asarray(self.mu, dtype=float)

    def replace(self, **changes) -> "ProblemSpec":
        return dataclasses.replace(self, **changes)

    def describe(self) -> dict:
        return {"n": self.n, "T": self.T, "mu": list(self.mu), "r": self.r,
                "p_field": self.p_field.describe(), "payoff": self.payoff.describe(),
                "lipschitz_g": self.lipschitz_g}


def lambda_bounds(spec: ProblemSpec) -> tuple[float, float]:
    """Ellipticity constants ``(min(1, p_min - 1), max(1, p_max - 1))``."""
    return min(1.0, spec.p_field.p_min - 1.0), max(1.0, spec.p_field.p_max - 1.0)


def validate_spec(spec: ProblemSpec, *, probe_radius: float = PROBE_RADIUS,
                  n_probe: int = PROBE_COUNT, seed: int = PROBE_SEED) -> list[str]:
    """Check the standing assumptions on a deterministic sample of probe points.

    Returns a list of human readable violations; the list is empty exactly when
    every check passes.
    """
    out: list[str] = []
    if spec.n < 2:
        out.append("dimension n must be at least 2")
    if not spec.T > 0:
        out.append("horizon T must be positive")
    if not spec.r >= 0:
        out.append("discount r must be nonnegative")
    if len(spec.mu) != spec.n:
        out.append("mu must have length n")
    if not spec.lipschitz_g > 0:
        out.append("lipschitz_g must be positive")
    if out:
        return out

    pf, g = spec.p_field, spec.payoff
    if not pf.p_min > 1.0:
        out.append("p_min must exceed 1")
    if not math.isfinite(pf.p_max):
        out.append("p_max must be finite")

    rng = np.random.default_rng(seed)
    n = spec.n
    x = rng.uniform(-probe_radius, probe_radius, size=(n_probe, n))
    t = rng.uniform(0.0, spec.T, size=n_probe)
    # Partner points at log-uniform distances for the Lipschitz probes.
    step = rng.normal(size=(n_probe, n))
    step /= np.linalg.norm(step, axis=1, keepdims=True)
    dist = 10.0 ** rng.uniform(-3, 0.5, size=n_probe)
    dt = rng.uniform(-1.0, 1.0, size=n_probe) * dist * 0.5
    y = x + step * dist[:, None]
    s = np.clip(t + dt, 0.0, spec.T)

    pv = pf.evaluate(x, t)
    pw = pf.evaluate(y, s)
    if np.any(pv < pf.p_min - 1e-12) or np.any(pv > pf.p_max + 1e-12):
        out.append("exponent field leaves [p_min, p_max]")
    sep = np.sqrt(np.sum((x - y) ** 2, axis=1) + (t - s) ** 2)
    if np.any(np.abs(pv - pw) > pf.lipschitz_p * sep * (1 + 1e-9) + 1e-12):
        out.append("exponent field exceeds declared Lipschitz constant")

    gx = g.evaluate(x)
    gy = g.evaluate(y)
    if np.any(gx <= 0) or np.any(gy <= 0):
        out.append("payoff must be positive")
    bounded = not (np.max(gx) > spec.lipschitz_g or np.max(gy) > spec.lipschitz_g)
    if not bounded:
        out.append("payoff not bounded by L_g")
    lip = np.max(np.abs(gx - gy) / np.linalg.norm(x - y, axis=1))
    if lip > spec.lipschitz_g:
        out.append("payoff Lipschitz seminorm exceeds L_g")
    elif bounded and max(np.max(gx), np.max(gy)) + lip >= spec.lipschitz_g:
        out.append("sup g plus Lipschitz seminorm must stay below L_g")
    return out


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform grid on ``[-R, R]^n`` and time levels ``T, T - dt, ..., 0``.

    Level ``j`` sits at time ``horizon - j * dt``; level 0 is terminal.
    """

    n: int
    half_width: float
    h: float
    horizon: float
    n_t: int

    def __post_init__(self):
        if self.h <= 0 or self.half_width <= 0 or self.n_t < 1 or self.horizon <= 0:
            raise ConfigurationError("grid needs positive h, half_width, horizon and n_t >= 1")
        ratio = 2.0 * self.half_width / self.h
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigurationError("2R/h must be an integer")
        if round(ratio) < 2:
            raise ConfigurationError("grid needs at least three nodes per axis")

    @classmethod
    def build(cls, n: int, half_width: float, h: float, horizon: float,
              dt: float | None = None, max_dt: float | None = None) -> "SpaceTimeGrid":
        """Grid with ``dt`` given, or the largest ``dt <= max_dt`` dividing the horizon."""
        if dt is None:
            if max_dt is None:
                raise ConfigurationError("either dt or max_dt is required")
            n_t = max(1, math.ceil(horizon / max_dt - 1e-12))
        else:
            n_t = max(1, round(horizon / dt))
            if abs(n_t * dt - horizon) > 1e-9 * horizon:
                raise ConfigurationError(f"dt={dt} does not divide the horizon {horizon}")
        return cls(n, float(half_width), float(h), float(horizon), int(n_t))

    @property
    def dt(self) -> float:
        return self.horizon / self.n_t

    @property
    def nodes_per_axis(self) -> int:
        return int(round(2.0 * self.half_width / self.h)) + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nodes_per_axis,) * self.n

    @property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.h * np.arange(self.nodes_per_axis)

    def level_time(self, j: int) -> float:
        return self.horizon - j * self.dt

    def points(self) -> np.ndarray:
        """All node coordinates, shape ``shape + (n,)``."""
        ax = self.axis
        mesh = np.meshgrid(*([ax] * self.n), indexing="ij")
        return np.stack(mesh, axis=-1)

    def node_coords(self, node: Sequence[int]) -> np.ndarray:
        return self.axis[np.asarray(node, dtype=int)]

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(np.abs(x) <= self.half_width * (1 + tol) + tol))

    def clamp(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), -self.half_width, self.half_width)

    def describe(self) -> dict:
        return {"n": self.n, "half_width": self.half_width, "h": self.h,
                "horizon": self.horizon, "n_t": self.n_t, "dt": self.dt}


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values of a scalar function on the spatial grid at one time level."""

    grid: SpaceTimeGrid
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ConfigurationError(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ConfigurationError("grid function has non-finite values")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def sample(cls, grid: SpaceTimeGrid, func, t: float = 0.0) -> "GridFunction":
        return cls(grid, func(grid.points()), t)


def interpolate(f: GridFunction, x) -> float:
    """Multilinear interpolation of ``f`` at a single point inside the grid box."""
    x = np.asarray(x, dtype=float)
    if not f.grid.contains(x):
        raise ExtensionError(f"point {x.tolist()} lies outside [-{f.grid.half_width}, {f.grid.half_width}]^n")
    return float(interpolate_many(f.values, f.grid, x[None, :])[0])


def interpolate_many(values: np.ndarray, grid: SpaceTimeGrid, X: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of node values at points ``X`` of shape ``(B, n)``.

    Trailing axes of ``values`` beyond the ``n`` spatial ones are carried along,
    so derivative fields can be interpolated in one call. Points are clamped
    to the box; callers that need the out-of-box error use :func:`interpolate`.
    """
    X = np.asarray(X, dtype=float)
    n = grid.n
    N = grid.nodes_per_axis
    s = (np.clip(X, -grid.half_width, grid.half_width) + grid.half_width) / grid.h
    i0 = np.clip(np.floor(s).astype(np.int64), 0, N - 2)
    w = s - i0
    out = 0.0
    for corner in range(1 << n):
        idx = []
        weight = np.ones(X.shape[0])
        for d in range(n):
            bit = (corner >> d) & 1
            idx.append(i0[:, d] + bit)
            weight = weight * (w[:, d] if bit else 1.0 - w[:, d])
        vals = values[tuple(idx)]
        out = out + weight.reshape((-1,) + (1,) * (vals.ndim - 1)) * vals
    return out


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).replace(";", ",").split(",") if v.strip())


def _points(text: str) -> tuple[tuple[float, ...], ...]:
    return tuple(_floats(chunk) for chunk in str(text).split("|") if chunk.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def _opt_float(text):
    if text is None or str(text).strip().lower() in ("", "auto", "none"):
        return None
    return float(text)


# key -> (parser, default, description). Defaults are the default instance.
CONFIG_SCHEMA: dict[str, tuple[Callable[[Any], Any], Any, str]] = {
    "n": (int, 2, "spatial dimension (>= 2)"),
    "T": (float, 1.0, "horizon"),
    "R": (float, 4.0, "grid half width"),
    "h": (float, 0.05, "spatial spacing"),
    "dt": (_opt_float, None, "PDE time step; 'auto' picks the largest stable one"),
    "mu": (_floats, (0.1, 0.0), "drift vector, comma separated"),
    "r": (float, 0.05, "discount rate"),
    "p_field": (str, "sinusoidal", "constant | sinusoidal"),
    "p_value": (float, 2.0, "value of a constant exponent field"),
    "p_base": (float, 3.0, "sinusoidal field: base value"),
    "p_amp": (float, 0.5, "sinusoidal field: amplitude"),
    "payoff": (str, "gaussian_bump", "gaussian_bump | smoothed_cone | constant"),
    "payoff_base": (float, 0.1, "payoff floor (positive)"),
    "payoff_amp": (float, 1.0, "payoff amplitude"),
    "payoff_width": (float, 1.0, "gaussian bump width / cone radius"),
    "payoff_smoothing": (float, 0.25, "cone tip smoothing"),
    "payoff_value": (float, 1.0, "value of a constant payoff"),
    "lipschitz_g": (float, 2.0, "L_g bound on sup g plus Lipschitz seminorm"),
    "m": (float, 10.0, "intensity bound for the bounded operators and the game"),
    "operator": (str, "lower_m", "lower_m | upper_m | limit"),
    "grad_epsilon": (float, 0.1, "vanishing-gradient threshold, in units of h"),
    "envelope_selection": (str, "midpoint", "value at vanishing gradient for 'limit': midpoint | lower | upper"),
    "boundary_policy": (str, "clamp_to_g", "clamp_to_g | barrier_box"),
    "cfl_safety": (float, 0.9, "fraction of the stable time step"),
    "n_directions": (int, 256, "directions in the action grid (n = 2: uniform angles)"),
    "store_every": (int, 10, "keep every k-th PDE level in the solution stack"),
    "seed": (int, 12345, "master seed for Monte Carlo"),
    "n_paths": (int, 10000, "Monte Carlo paths"),
    "mc_dt": (float, 1e-3, "Euler-Maruyama step"),
    "decision_stride": (int, 10, "integration steps per control decision epoch"),
    "anchors": (_points, ((0.0, 0.0), (0.5, 0.0), (-0.5, 0.5)), "anchor points, '|' separated"),
    "m_values": (_floats, (10.0, 100.0, 1000.0), "intensity bounds for the m_convergence solves"),
    "limit_m_values": (_floats, (10.0, 100.0, 1000.0, 10000.0), "intensity bounds for operator_limit"),
    "export_levels": (int, 11, "stored levels written by 'solve' (evenly spaced, T and 0 included)"),
    "conv_eps": (_floats, (0.1, 0.05, 0.025), "regularization scales for convolution checks"),
    "verbose": (_bool, False, "export per-path trajectories"),
    "experiments": (lambda s: tuple(v.strip() for v in str(s).split(",") if v.strip()),
                    ("heat_check", "operator_limit", "value_match", "barrier_check",
                     "comparison_check", "convolution_check", "m_convergence",
                     "boundary_sensitivity"), "experiments run by 'sweep'"),
}


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration: one value per :data:`CONFIG_SCHEMA` key."""

    values: Mapping[str, Any]

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any] | None = None) -> "RunConfig":
        raw = dict(raw or {})
        unknown = sorted(set(raw) - set(CONFIG_SCHEMA))
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        vals = {}
        for key, (parse, default, _) in CONFIG_SCHEMA.items():
            if key in raw:
                try:
                    vals[key] = parse(raw[key]) if isinstance(raw[key], str) else _coerce(parse, raw[key])
                except (TypeError, ValueError) as exc:
                    raise ConfigurationError(f"bad value for {key!r}: {raw[key]!r}") from exc
            else:
                vals[key] = default
        return cls(vals)

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, **changes) -> "RunConfig":
        merged = dict(self.values)
        merged.update(changes)
        return RunConfig.from_mapping(merged)

    def exponent_field(self) -> ExponentField:
        kind = self["p_field"]
        if kind == "constant":
            return ExponentField.constant(self["p_value"])
        if kind == "sinusoidal":
            return ExponentField.sinusoidal(self["p_base"], self["p_amp"])
        raise ConfigurationError(f"unknown p_field {kind!r}")

    def payoff_field(self) -> PayoffField:
        kind = self["payoff"]
        if kind == "gaussian_bump":
            return PayoffField.gaussian_bump(self["payoff_base"], self["payoff_amp"], self["payoff_width"])
        if kind == "smoothed_cone":
            return PayoffField.smoothed_cone(self["payoff_base"], self["payoff_amp"],
                                             self["payoff_width"], self["payoff_smoothing"])
        if kind == "constant":
            return PayoffField.constant(self["payoff_value"])
        raise ConfigurationError(f"unknown payoff {kind!r}")

    def problem_spec(self) -> ProblemSpec:
        return ProblemSpec(n=self["n"], T=self["T"], mu=tuple(self["mu"]), r=self["r"],
                           p_field=self.exponent_field(), payoff=self.payoff_field(),
                           lipschitz_g=self["lipschitz_g"])

    def echo(self) -> dict:
        out = {}
        for key, val in self.values.items():
            if isinstance(val, tuple):
                val = [list(v) if isinstance(v, tuple) else v for v in val]
            out[key] = val
        return out


def _coerce(parse, value):
    if parse is _floats:
        return tuple(float(v) for v in value)
    if parse is _points:
        return tuple(tuple(float(c) for c in p) for p in value)
    if parse is _opt_float:
        return None if value is None else float(value)
    if parse is _bool:
        return bool(value)
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return parse(value)
