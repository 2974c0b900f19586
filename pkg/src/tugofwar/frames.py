"""Orthonormal frames of the hyperplane orthogonal to a unit vector."""

import numpy as np

from .errors import DomainError

_BRANCH_TOL = np.finfo(float).tiny


def _shifted(nu: np.ndarray) -> np.ndarray:
    """``nu + e_1`` along the last axis, with ``1 + nu_1`` free of cancellation near ``-e_1``."""
    v = np.array(nu, dtype=float, copy=True)
    rest = np.sum(v[..., 1:] ** 2, axis=-1)
    first = v[..., 0]
    # for unit nu, 1 + nu_1 = |nu_rest|^2 / (1 - nu_1)
    v[..., 0] = np.where(first < 0.0, rest / np.where(first < 0.0, 1.0 - first, 1.0), 1.0 + first)
    return v


def orthogonal_complement_basis(nu) -> np.ndarray:
    """Columns spanning ``nu^perp``, shape ``(n, n - 1)``.

    Uses the Householder reflection ``-(I - 2 v v^T / |v|^2)`` with
    ``v = e_1 + nu``, which maps ``e_1`` to ``nu``; its columns ``2..n`` are the
    basis. The map is smooth away from the branch point ``nu = -e_1``, where
    the coordinate axes ``e_2..e_n`` are returned.
    """
    nu = np.asarray(nu, dtype=float)
    norm = np.linalg.norm(nu)
    if norm == 0.0:
        raise DomainError("orthogonal complement of the zero vector is undefined")
    if abs(norm - 1.0) > 1e-10:
        raise DomainError(f"expected a unit vector, got |nu| = {norm}")
    n = nu.shape[0]
    v = _shifted(nu)
    vv = v @ v
    if vv < _BRANCH_TOL:
        return np.eye(n)[:, 1:]
    return -np.eye(n)[:, 1:] + (2.0 / vv) * np.outer(v, v[1:])


def complement_apply(nu: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Batched ``P_nu^perp @ w`` for ``nu`` of shape (B, n) and ``w`` of shape (B, n-1)."""
    v = _shifted(nu)
    vv = np.sum(v * v, axis=1)
    branch = vv < _BRANCH_TOL
    safe = np.where(branch, 1.0, vv)
    coef = 2.0 * np.sum(v[:, 1:] * w, axis=1) / safe
    out = coef[:, None] * v
    out[:, 1:] -= w
    if np.any(branch):
        out[branch, 0] = 0.0
        out[branch, 1:] = w[branch]
    return out
