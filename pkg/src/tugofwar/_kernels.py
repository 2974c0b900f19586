"""Compiled inner loops for the Bellman-Isaacs operators.

All kernels work on a batch of "nodes" (grid nodes or sample paths). For node
``i`` the controlled generator is

    L(a, b, c, d) = base_i + w_i(a) + w_i(b) + (c + d) * (<a, nu_i> + <b, nu_i>)

with ``w_i(a) = k_i * a^T M_i a``. The cross entries of ``M_i`` come in two
flavours so the solver can pick the one-sided diagonal stencil whose sign
matches the coefficient ``k_i a_j a_l``; pointwise callers pass the same
matrix twice. Intensities only take the values 0 and m: L is affine in each.

Directions are scanned in the order (+nu_hat, -nu_hat, grid...), the first
two only when nu != 0. Ties keep the first candidate.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _fill(i, diag, xpos, xneg, nu, k, dirs, pairs, W, Lv, D):
    n = diag.shape[1]
    K = dirs.shape[0]
    npairs = pairs.shape[0]
    nrm = 0.0
    for j in range(n):
        nrm += nu[i, j] * nu[i, j]
    nrm = math.sqrt(nrm)
    off = 0
    if nrm > 0.0:
        for j in range(n):
            D[0, j] = nu[i, j] / nrm
            D[1, j] = -D[0, j]
        off = 2
    for a in range(K):
        for j in range(n):
            D[off + a, j] = dirs[a, j]
    nd = off + K
    ki = k[i]
    for a in range(nd):
        q = 0.0
        lv = 0.0
        for j in range(n):
            q += D[a, j] * D[a, j] * diag[i, j]
            lv += D[a, j] * nu[i, j]
        for pp in range(npairs):
            prod = D[a, pairs[pp, 0]] * D[a, pairs[pp, 1]]
            if ki * prod >= 0.0:
                q += 2.0 * prod * xpos[i, pp]
            else:
                q += 2.0 * prod * xneg[i, pp]
        W[a] = ki * q
        Lv[a] = lv
    return nd


@njit(cache=True)
def isaacs_kernel(diag, xpos, xneg, nu, k, base, dirs, pairs, m,
                  want_lower, want_upper):
    """Lower/upper values ``sup_{a,c} inf_{b,d} L`` and ``inf_{b,d} sup_{a,c} L``.

    Returns the two value arrays plus the optimal outer control of each
    (direction rows and intensities).
    """
    N, n = diag.shape
    K = dirs.shape[0]
    W = np.empty(K + 2)
    Lv = np.empty(K + 2)
    D = np.empty((K + 2, n))
    v_low = np.empty(N)
    v_up = np.empty(N)
    a_low = np.zeros((N, n))
    c_low = np.zeros(N)
    b_up = np.zeros((N, n))
    d_up = np.zeros(N)
    bmin = np.empty(3)
    bmax = np.empty(3)
    for i in range(N):
        nd = _fill(i, diag, xpos, xneg, nu, k, dirs, pairs, W, Lv, D)
        for s in range(3):
            bmin[s] = np.inf
            bmax[s] = -np.inf
        for b in range(nd):
            for s in range(3):
                val = W[b] + (s * m) * Lv[b]
                if val < bmin[s]:
                    bmin[s] = val
                if val > bmax[s]:
                    bmax[s] = val
        if want_lower:
            best = -np.inf
            best_a = 0
            best_c = 0
            for a in range(nd):
                for ci in range(2):
                    inner = np.inf
                    for di in range(2):
                        val = W[a] + ((ci + di) * m) * Lv[a] + bmin[ci + di]
                        if val < inner:
                            inner = val
                    if inner > best:
                        best = inner
                        best_a = a
                        best_c = ci
            v_low[i] = base[i] + best
            for j in range(n):
                a_low[i, j] = D[best_a, j]
            c_low[i] = best_c * m
        if want_upper:
            best = np.inf
            best_b = 0
            best_d = 0
            for b in range(nd):
                for di in range(2):
                    inner = -np.inf
                    for ci in range(2):
                        val = W[b] + ((ci + di) * m) * Lv[b] + bmax[ci + di]
                        if val > inner:
                            inner = val
                    if inner < best:
                        best = inner
                        best_b = b
                        best_d = di
            v_up[i] = base[i] + best
            for j in range(n):
                b_up[i, j] = D[best_b, j]
            d_up[i] = best_d * m
    return v_low, v_up, a_low, c_low, b_up, d_up


@njit(cache=True)
def response_kernel(diag, xpos, xneg, nu, k, dirs, pairs, m, given_dir, given_int,
                    minimize_generator):
    """Best reply to a fixed opponent control at every node.

    With ``minimize_generator`` the reply minimises L (the sup-player of Phi
    answering the inf-player); otherwise it maximises L.
    """
    N, n = diag.shape
    K = dirs.shape[0]
    W = np.empty(K + 2)
    Lv = np.empty(K + 2)
    D = np.empty((K + 2, n))
    out_dir = np.zeros((N, n))
    out_int = np.zeros(N)
    for i in range(N):
        nd = _fill(i, diag, xpos, xneg, nu, k, dirs, pairs, W, Lv, D)
        l_given = 0.0
        for j in range(n):
            l_given += given_dir[i, j] * nu[i, j]
        if minimize_generator:
            best = np.inf
        else:
            best = -np.inf
        best_b = 0
        best_d = 0
        for b in range(nd):
            for di in range(2):
                s = given_int[i] + di * m
                val = W[b] + s * (l_given + Lv[b])
                if minimize_generator:
                    if val < best:
                        best = val
                        best_b = b
                        best_d = di
                else:
                    if val > best:
                        best = val
                        best_b = b
                        best_d = di
        for j in range(n):
            out_dir[i, j] = D[best_b, j]
        out_int[i] = best_d * m
    return out_dir, out_int


@njit(cache=True)
def lower_envelope_1d(f, coords, inv2eps, out):
    """Exact ``min_q f[q] + inv2eps * (x - coords[q])^2`` at every ``x`` in ``coords``.

    Lower envelope of parabolas (Felzenszwalb-Huttenlocher) for increasing,
    not necessarily uniform, coordinates. Entries that are +inf are skipped.
    """
    N = f.shape[0]
    v = np.empty(N, dtype=np.int64)
    z = np.empty(N + 1)
    a = inv2eps
    kk = -1
    s = 0.0
    for q in range(N):
        if not np.isfinite(f[q]):
            continue
        xq = coords[q]
        if kk < 0:
            kk = 0
            v[0] = q
            z[0] = -np.inf
            z[1] = np.inf
            continue
        while True:
            p = v[kk]
            xp = coords[p]
            s = ((f[q] + a * xq * xq) - (f[p] + a * xp * xp)) / (2.0 * a * (xq - xp))
            if s <= z[kk]:
                kk -= 1
                if kk < 0:
                    break
            else:
                break
        kk += 1
        v[kk] = q
        z[kk] = -np.inf if kk == 0 else s
        z[kk + 1] = np.inf
    if kk < 0:
        for x in range(N):
            out[x] = np.inf
        return
    j = 0
    for x in range(N):
        cx = coords[x]
        while z[j + 1] < cx:
            j += 1
        p = v[j]
        d = cx - coords[p]
        out[x] = f[p] + inv2eps * d * d


@njit(cache=True)
def lower_envelope_lines(arr, coords, inv2eps):
    """Apply :func:`lower_envelope_1d` to every row of a 2-D array."""
    out = np.empty_like(arr)
    for r in range(arr.shape[0]):
        lower_envelope_1d(arr[r], coords, inv2eps, out[r])
    return out


@njit(cache=True)
def _quad(i, D, a, diag, xpos, xneg, pairs, ki):
    q = 0.0
    for j in range(D.shape[1]):
        q += D[a, j] * D[a, j] * diag[i, j]
    for pp in range(pairs.shape[0]):
        prod = D[a, pairs[pp, 0]] * D[a, pairs[pp, 1]]
        if ki * prod >= 0.0:
            q += 2.0 * prod * xpos[i, pp]
        else:
            q += 2.0 * prod * xneg[i, pp]
    return q


@njit(cache=True, fastmath=True)
def isaacs_values(diag, xpos, xneg, nu, k, base, dirs, feat, pairs, m, lower):
    """Value-only fast path of :func:`isaacs_kernel` for the marching loop.

    ``feat`` rows are ``[a_j^2 ..., a_i a_j ..., |a_i a_j| ...]`` for the grid
    directions. The sign-matched cross stencil is written branch-free as
    ``a_i a_j (x+ + x-) + sign(k) |a_i a_j| (x+ - x-)``. Values agree with
    :func:`isaacs_kernel` to round-off; no argmax is tracked, so direction
    order is irrelevant.
    """
    N, n = diag.shape
    K = dirs.shape[0]
    P = pairs.shape[0]
    F = feat.shape[1]
    W = np.empty(K + 2)
    Lv = np.empty(K + 2)
    E = np.empty((1, n))
    coef = np.empty(F)
    out = np.empty(N)
    for i in range(N):
        ki = k[i]
        sk = 1.0 if ki >= 0.0 else -1.0
        for j in range(n):
            coef[j] = diag[i, j]
        for pp in range(P):
            coef[n + pp] = xpos[i, pp] + xneg[i, pp]
            coef[n + P + pp] = sk * (xpos[i, pp] - xneg[i, pp])
        for a in range(K):
            q = 0.0
            for f in range(F):
                q += feat[a, f] * coef[f]
            lv = 0.0
            for j in range(n):
                lv += dirs[a, j] * nu[i, j]
            W[a] = ki * q
            Lv[a] = lv
        nd = K
        nrm = 0.0
        for j in range(n):
            nrm += nu[i, j] * nu[i, j]
        nrm = math.sqrt(nrm)
        if nrm > 0.0:
            for j in range(n):
                E[0, j] = nu[i, j] / nrm
            q = _quad(i, E, 0, diag, xpos, xneg, pairs, ki)
            W[K] = ki * q
            W[K + 1] = ki * q
            Lv[K] = nrm
            Lv[K + 1] = -nrm
            nd = K + 2
        if lower:
            b0 = np.inf
            b1 = np.inf
            b2 = np.inf
            for b in range(nd):
                w = W[b]
                s = m * Lv[b]
                b0 = min(b0, w)
                b1 = min(b1, w + s)
                b2 = min(b2, w + 2.0 * s)
            best = -np.inf
            for a in range(nd):
                w = W[a]
                s = m * Lv[a]
                v = max(min(w + b0, w + s + b1), min(w + s + b1, w + 2.0 * s + b2))
                best = max(best, v)
        else:
            b0 = -np.inf
            b1 = -np.inf
            b2 = -np.inf
            for b in range(nd):
                w = W[b]
                s = m * Lv[b]
                b0 = max(b0, w)
                b1 = max(b1, w + s)
                b2 = max(b2, w + 2.0 * s)
            best = np.inf
            for a in range(nd):
                w = W[a]
                s = m * Lv[a]
                v = min(max(w + b0, w + s + b1), max(w + s + b1, w + 2.0 * s + b2))
                best = min(best, v)
        out[i] = base[i] + best
    return out


def direction_features(dirs: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Feature rows consumed by :func:`isaacs_values`."""
    pr = dirs[:, pairs[:, 0]] * dirs[:, pairs[:, 1]]
    return np.ascontiguousarray(np.concatenate([dirs ** 2, pr, np.abs(pr)], axis=1))
