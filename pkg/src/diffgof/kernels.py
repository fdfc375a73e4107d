"""Hot loops, each in a numba version and a pure-numpy version.

The implementation used at runtime is picked once at import time (see
:mod:`diffgof._backend`); both variants are always importable so the
benchmark and the cross-check tests can call them side by side.

Drift programs are the flat arrays produced by
:attr:`diffgof.model.DiffusionModel.program`: ``ops`` lists opcodes leaf
first, ``pars`` holds four parameters per opcode, ``coef`` the
polynomial/trigonometric coefficients, and ``dcode``/``dpar`` describe
sigma.
"""
from __future__ import annotations

import math

import numpy as np

from ._backend import HAVE_NUMBA, USE_NUMBA, jit
from .model import DIFF_CONST, OP_ONESIDED, OP_OSC, OP_OU, OP_POLYTRIG, OP_SWITCH

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


# ---------------------------------------------------------------------------
# drift / diffusion evaluation


def _sigma2_scalar(dcode, dpar, x):
    if dcode == DIFF_CONST:
        return dpar[0] * dpar[0]
    return dpar[0] + x * (dpar[1] + x * dpar[2])


def _drift_scalar(ops, pars, coef, dcode, dpar, x):
    val = 0.0
    for i in range(ops.shape[0]):
        op = ops[i]
        if op == OP_OU:
            val = -pars[i, 0] * (x - pars[i, 1])
        elif op == OP_SWITCH:
            d = x - pars[i, 1]
            if d > 0.0:
                val = -pars[i, 0]
            elif d < 0.0:
                val = pars[i, 0]
            else:
                val = 0.0
        elif op == OP_POLYTRIG:
            off = int(pars[i, 0])
            npoly = int(pars[i, 1])
            ncos = int(pars[i, 2])
            nsin = int(pars[i, 3])
            acc = 0.0
            for k in range(npoly - 1, -1, -1):
                acc = acc * x + coef[off + k]
            for j in range(ncos):
                acc += coef[off + npoly + j] * math.cos((j + 1) * x)
            for j in range(nsin):
                acc += coef[off + npoly + ncos + j] * math.sin((j + 1) * x)
            val = acc
        elif op == OP_ONESIDED:
            if x >= pars[i, 1]:
                val = pars[i, 0] * val
        elif op == OP_OSC:
            val = val + pars[i, 0] * _sigma2_scalar_nb(dcode, dpar, x) * math.cos(pars[i, 1] * x)
    return val


_sigma2_scalar_nb = jit(_sigma2_scalar)
_drift_scalar_nb = jit(_drift_scalar)


def drift_program_numpy(ops, pars, coef, dcode, dpar, x):
    """Vectorised evaluation of a drift program at the points ``x``."""
    x = np.asarray(x, dtype=np.float64)
    val = np.zeros_like(x)
    for i in range(ops.shape[0]):
        op = ops[i]
        if op == OP_OU:
            val = -pars[i, 0] * (x - pars[i, 1])
        elif op == OP_SWITCH:
            val = -pars[i, 0] * np.sign(x - pars[i, 1])
        elif op == OP_POLYTRIG:
            off, npoly, ncos, nsin = (int(v) for v in pars[i])
            acc = np.zeros_like(x)
            for k in range(npoly - 1, -1, -1):
                acc = acc * x + coef[off + k]
            for j in range(ncos):
                acc = acc + coef[off + npoly + j] * np.cos((j + 1) * x)
            for j in range(nsin):
                acc = acc + coef[off + npoly + ncos + j] * np.sin((j + 1) * x)
            val = acc
        elif op == OP_ONESIDED:
            val = np.where(x >= pars[i, 1], pars[i, 0] * val, val)
        elif op == OP_OSC:
            val = val + pars[i, 0] * sigma2_program_numpy(dcode, dpar, x) * np.cos(pars[i, 1] * x)
    return val


def sigma2_program_numpy(dcode, dpar, x):
    x = np.asarray(x, dtype=np.float64)
    if dcode == DIFF_CONST:
        return np.full_like(x, dpar[0] * dpar[0])
    return dpar[0] + x * (dpar[1] + x * dpar[2])


def _drift_array_nb_impl(ops, pars, coef, dcode, dpar, x):
    out = np.empty(x.shape[0])
    for k in range(x.shape[0]):
        out[k] = _drift_scalar_nb(ops, pars, coef, dcode, dpar, x[k])
    return out


_drift_array_nb = jit(_drift_array_nb_impl)


def drift_array(program, x):
    """S(x) for a 1-d array ``x`` using the active backend."""
    ops, pars, coef, dcode, dpar = program
    x = np.ascontiguousarray(x, dtype=np.float64)
    if USE_NUMBA:
        return _drift_array_nb(ops, pars, coef, dcode, dpar, x.ravel()).reshape(x.shape)
    return drift_program_numpy(ops, pars, coef, dcode, dpar, x)


# ---------------------------------------------------------------------------
# Euler-Maruyama


def _euler_numba_impl(ops, pars, coef, dcode, dpar, x0, z, dt, bound):
    R, N = z.shape
    out = np.empty((R, N + 1))
    status = np.full(R, -1, dtype=np.int64)
    sq = math.sqrt(dt)
    for r in range(R):
        x = x0[r]
        out[r, 0] = x
        for k in range(N):
            s = _drift_scalar_nb(ops, pars, coef, dcode, dpar, x)
            sig = math.sqrt(_sigma2_scalar_nb(dcode, dpar, x))
            x = x + s * dt + sig * sq * z[r, k]
            if not (abs(x) <= bound):
                status[r] = k + 1
                for j in range(k + 1, N + 1):
                    out[r, j] = np.nan
                break
            out[r, k + 1] = x
    return out, status


_euler_nb = jit(_euler_numba_impl)


def euler_numpy(ops, pars, coef, dcode, dpar, x0, z, dt, bound):
    R, N = z.shape
    out = np.empty((R, N + 1))
    status = np.full(R, -1, dtype=np.int64)
    sq = math.sqrt(dt)
    x = np.array(x0, dtype=np.float64)
    out[:, 0] = x
    alive = np.ones(R, dtype=bool)
    for k in range(N):
        s = drift_program_numpy(ops, pars, coef, dcode, dpar, x)
        sig = np.sqrt(sigma2_program_numpy(dcode, dpar, x))
        x = x + s * dt + sig * sq * z[:, k]
        bad = alive & ~(np.abs(x) <= bound)
        if bad.any():
            status[bad] = k + 1
            alive &= ~bad
            x[bad] = np.nan
        out[:, k + 1] = x
    return out, status


def euler_numba(ops, pars, coef, dcode, dpar, x0, z, dt, bound):
    return _euler_nb(ops, pars, coef, dcode, dpar, x0, z, dt, bound)


def euler(program, x0, z, dt, bound):
    """Euler-Maruyama paths. ``x0`` shape (R,), ``z`` standard normals (R, N).

    Returns ``(paths (R, N+1), status (R,))`` where ``status[r]`` is -1 for a
    clean path and otherwise the first step index with ``|X| > bound``.
    """
    ops, pars, coef, dcode, dpar = program
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    fn = euler_numba if USE_NUMBA else euler_numpy
    return fn(ops, pars, coef, dcode, dpar, x0, z, float(dt), float(bound))


# ---------------------------------------------------------------------------
# sums over the sample points lying below each node


def _below_sums_numba_impl(x, w, nodes):
    N, m = w.shape
    G = nodes.shape[0]
    acc = np.zeros((G + 1, m))
    for k in range(N):
        # first node strictly greater than x[k]
        lo, hi = 0, G
        xk = x[k]
        while lo < hi:
            mid = (lo + hi) >> 1
            if nodes[mid] > xk:
                hi = mid
            else:
                lo = mid + 1
        for j in range(m):
            acc[lo, j] += w[k, j]
    out = np.empty((G, m))
    for j in range(m):
        run = 0.0
        for i in range(G):
            run += acc[i, j]
            out[i, j] = run
    return out


_below_sums_nb = jit(_below_sums_numba_impl)


def below_sums_numpy(x, w, nodes):
    G = nodes.shape[0]
    idx = np.searchsorted(nodes, x, side="right")
    out = np.empty((G, w.shape[1]))
    for j in range(w.shape[1]):
        acc = np.bincount(idx, weights=w[:, j], minlength=G + 1)
        out[:, j] = np.cumsum(acc[:G])
    return out


def below_sums_numba(x, w, nodes):
    return _below_sums_nb(x, w, nodes)


def below_sums(x, w, nodes):
    """``out[i, j] = sum_k w[k, j] * 1{x[k] < nodes[i]}``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None]
    nodes = np.ascontiguousarray(nodes, dtype=np.float64)
    fn = below_sums_numba if USE_NUMBA else below_sums_numpy
    return fn(x, w, nodes)


# ---------------------------------------------------------------------------
# Gaussian kernel density on nodes (exact windowed sums)

_KERNEL_CUTOFF = 9.0  # bandwidths; exp(-40.5) is below double precision of the sum


def _kde_numba_impl(xs, nodes, bw):
    G = nodes.shape[0]
    out = np.zeros(G)
    n = xs.shape[0]
    c = 1.0 / (bw * math.sqrt(2.0 * math.pi))
    lo = 0
    for i in range(G):
        left = nodes[i] - _KERNEL_CUTOFF * bw
        right = nodes[i] + _KERNEL_CUTOFF * bw
        while lo < n and xs[lo] < left:
            lo += 1
        acc = 0.0
        k = lo
        while k < n and xs[k] <= right:
            u = (xs[k] - nodes[i]) / bw
            acc += math.exp(-0.5 * u * u)
            k += 1
        out[i] = acc * c
    return out


def _kde_uniform_numba_impl(xs, x0, h, G, bw):
    """Same sums on the uniform grid x0 + j h, scattering each sample over the nodes in its window.

    Along the grid the Gaussian obeys K_{j+1} = K_j r_j with r_{j+1} = r_j q,
    q = exp(-h^2/bw^2), so each sample costs two exponentials.
    """
    out = np.zeros(G)
    c = 1.0 / (bw * math.sqrt(2.0 * math.pi))
    q = math.exp(-h * h / (bw * bw))
    reach = _KERNEL_CUTOFF * bw
    for k in range(xs.shape[0]):
        x = xs[k]
        j0 = int(math.ceil((x - reach - x0) / h))
        j1 = int(math.floor((x + reach - x0) / h))
        if j0 < 0:
            j0 = 0
        if j1 > G - 1:
            j1 = G - 1
        if j0 > j1:
            continue
        d = (x - (x0 + j0 * h)) / bw
        K = math.exp(-0.5 * d * d)
        r = math.exp(d * h / bw - 0.5 * h * h / (bw * bw))
        for j in range(j0, j1 + 1):
            out[j] += K
            K *= r
            r *= q
    return out * c


_kde_nb = jit(_kde_numba_impl)
_kde_uniform_nb = jit(_kde_uniform_numba_impl)


def kde_numpy(xs, nodes, bw):
    c = 1.0 / (bw * math.sqrt(2.0 * math.pi))
    lo = np.searchsorted(xs, nodes - _KERNEL_CUTOFF * bw, side="left")
    hi = np.searchsorted(xs, nodes + _KERNEL_CUTOFF * bw, side="right")
    out = np.zeros(nodes.shape[0])
    for i in np.nonzero(hi > lo)[0]:
        u = (xs[lo[i]:hi[i]] - nodes[i]) / bw
        out[i] = np.exp(-0.5 * u * u).sum() * c
    return out


def kde_numba(xs, nodes, bw):
    G = nodes.shape[0]
    if G > 1:
        h = (nodes[-1] - nodes[0]) / (G - 1)
        if np.max(np.abs(nodes - (nodes[0] + h * np.arange(G)))) <= 1e-9 * h:
            return _kde_uniform_nb(xs, float(nodes[0]), float(h), G, float(bw))
    return _kde_nb(xs, nodes, bw)


def kde_sorted(xs_sorted, nodes, bw):
    """Average Gaussian kernel of bandwidth ``bw`` centred on each sample,
    evaluated at ``nodes`` (``xs_sorted`` ascending, nodes ascending), i.e.
    ``sum_k K_bw(nodes_i - xs_k)``; divide by the sample count for a mean."""
    xs_sorted = np.ascontiguousarray(xs_sorted, dtype=np.float64)
    nodes = np.ascontiguousarray(nodes, dtype=np.float64)
    fn = kde_numba if USE_NUMBA else kde_numpy
    return fn(xs_sorted, nodes, float(bw))


# ---------------------------------------------------------------------------
# counter-based uniforms (splitmix64) for bridge sampling


def _splitmix_uniform(key, counter):
    z = (key + (counter + np.uint64(1)) * np.uint64(0x9E3779B97F4A7C15)) & _MASK64
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
    z = z ^ (z >> np.uint64(31))
    # 53 high bits -> (0, 1)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def splitmix_uniform_numpy(key, counter):
    key = np.asarray(key, dtype=np.uint64)
    counter = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _splitmix_uniform(key, counter)


if HAVE_NUMBA:
    from numba import njit as _njit2

    @_njit2(cache=True, nogil=True)
    def _splitmix_uniform_nb(key, counter):
        z = key + (counter + np.uint64(1)) * np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
        return (np.float64(z >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


# ---------------------------------------------------------------------------
# Wiener functionals
#
# A block of B paths is given by w0 (value at the first grid point) and
# standard-normal increments z (B, n); the grid spacing is dv. ``kind`` 0
# is an integral  sum_i wts[i] w_i^2  (trapezoid weights times the weight
# function), kind 1 is a supremum  sup |w(v)| e(v)  where the discrete
# maximum is corrected by sampling the Brownian-bridge maximum inside each
# step that could beat it. ``wts`` then holds e at the grid points and
# ``wmid`` e at the step midpoints.

_BRIDGE_REACH = 8.0  # steps whose endpoints are more than 8 sqrt(dv) below the running sup are skipped


def _bridge_extreme(a, b, dv, u):
    """Maximum of a Brownian bridge from a to b over a step of length dv."""
    return 0.5 * (a + b + math.sqrt((b - a) * (b - a) - 2.0 * dv * math.log(u)))


if HAVE_NUMBA:
    _bridge_extreme_nb = jit(_bridge_extreme)

    @_njit2(cache=True, nogil=True)
    def _wiener_reduce_nb(w0, z, dv, wts, wmid, kind, keys):
        B, n = z.shape
        out = np.empty(B)
        sd = math.sqrt(dv)
        path = np.empty(n + 1)
        for b in range(B):
            w = w0[b]
            path[0] = w
            for i in range(n):
                w += sd * z[b, i]
                path[i + 1] = w
            if kind == 0:
                acc = 0.0
                for i in range(n + 1):
                    acc += wts[i] * path[i] * path[i]
                out[b] = acc
            else:
                best = 0.0
                for i in range(n + 1):
                    v = abs(path[i]) * wts[i]
                    if v > best:
                        best = v
                reach = _BRIDGE_REACH * sd
                key = keys[b]
                for i in range(n):
                    a = path[i]
                    c = path[i + 1]
                    m = max(abs(a), abs(c))
                    if (m + reach) * wmid[i] <= best:
                        continue
                    u1 = _splitmix_uniform_nb(key, np.uint64(2 * i))
                    u2 = _splitmix_uniform_nb(key, np.uint64(2 * i + 1))
                    top = _bridge_extreme_nb(a, c, dv, u1)
                    bot = _bridge_extreme_nb(-a, -c, dv, u2)
                    v = max(top, bot) * wmid[i]
                    if v > best:
                        best = v
                out[b] = best
        return out


def wiener_reduce_numpy(w0, z, dv, wts, wmid, kind, keys):
    path = np.cumsum(z * math.sqrt(dv), axis=1)
    path = np.concatenate([np.zeros((z.shape[0], 1)), path], axis=1) + w0[:, None]
    if kind == 0:
        return (path * path) @ wts
    absw = np.abs(path)
    best = (absw * wts[None, :]).max(axis=1)
    reach = _BRIDGE_REACH * math.sqrt(dv)
    m = np.maximum(absw[:, :-1], absw[:, 1:])
    cand = (m + reach) * wmid[None, :] > best[:, None]
    rows, cols = np.nonzero(cand)
    if rows.size:
        a = path[rows, cols]
        c = path[rows, cols + 1]
        ctr = cols.astype(np.uint64)
        u1 = splitmix_uniform_numpy(keys[rows], 2 * ctr)
        u2 = splitmix_uniform_numpy(keys[rows], 2 * ctr + np.uint64(1))
        d2 = (c - a) ** 2
        top = 0.5 * (a + c + np.sqrt(d2 - 2.0 * dv * np.log(u1)))
        bot = 0.5 * (-a - c + np.sqrt(d2 - 2.0 * dv * np.log(u2)))
        val = np.maximum(top, bot) * wmid[cols]
        np.maximum.at(best, rows, val)
    return best


def wiener_reduce_numba(w0, z, dv, wts, wmid, kind, keys):
    return _wiener_reduce_nb(w0, z, dv, wts, wmid, kind, keys)


def wiener_reduce(w0, z, dv, wts, wmid, kind, keys):
    args = (
        np.ascontiguousarray(w0, dtype=np.float64),
        np.ascontiguousarray(z, dtype=np.float64),
        float(dv),
        np.ascontiguousarray(wts, dtype=np.float64),
        np.ascontiguousarray(wmid, dtype=np.float64),
        int(kind),
        np.ascontiguousarray(keys, dtype=np.uint64),
    )
    fn = wiener_reduce_numba if USE_NUMBA else wiener_reduce_numpy
    return fn(*args)


# ---------------------------------------------------------------------------
# discretised log-likelihood over a parameter grid


def loglik_numpy(x, dx, S_rows, s2, dt):
    """``S_rows`` (P, N) drift values at the left points for each parameter."""
    return (S_rows * (dx / s2)[None, :]).sum(axis=1) - 0.5 * dt * (S_rows * S_rows / s2[None, :]).sum(axis=1)


__all__ = [
    "below_sums",
    "below_sums_numba",
    "below_sums_numpy",
    "drift_array",
    "drift_program_numpy",
    "euler",
    "euler_numba",
    "euler_numpy",
    "kde_numba",
    "kde_numpy",
    "kde_sorted",
    "sigma2_program_numpy",
    "splitmix_uniform_numpy",
    "wiener_reduce",
    "wiener_reduce_numba",
    "wiener_reduce_numpy",
]
