"""Numba-compiled versions of the hot kernels.

Each function mirrors its counterpart in :mod:`wjko.accel.numpy_impl`
entry for entry; the test suite checks the two paths against each other.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def _root_one(s, sigma, m, tol, maxiter):
    if s <= 0.0:
        return 0.0, True
    if m == 1.0:
        return s ** (1.0 / (1.0 + sigma)), True
    if sigma == 0.0:
        return s, True
    ls = math.log(s)
    k = m - 1.0
    c = m * sigma
    if ls > 0.0:
        t_up = math.log1p(ls * k / c) / k
        hi = min(ls, t_up)
        lo = 0.0
    else:
        hi = 0.0
        lo = ls
    t = hi
    for _ in range(maxiter):
        g = t + c * math.expm1(k * t) / k - ls
        gp = 1.0 + c * math.exp(k * t)
        if abs(g) <= tol:
            # one more Newton step takes the residual down to rounding level
            return math.exp(t - g / gp), True
        if g > 0.0:
            hi = t
        elif g < 0.0:
            lo = t
        tn = t - g / gp
        if not math.isfinite(tn) or tn < lo or tn > hi:
            tn = 0.5 * (lo + hi)
        if tn == t:
            return math.exp(t), True
        t = tn
    return math.exp(t), False


@njit(cache=True)
def _root_all(s, sigma, m, tol, maxiter, out):
    for i in range(s.size):
        v, ok = _root_one(s[i], sigma[i], m[i], tol, maxiter)
        if not ok:
            return i
        out[i] = v
    return -1


def gen_entropy_root(s, sigma, m, tol=1e-12, maxiter=100):
    s = np.ascontiguousarray(s, dtype=np.float64)
    sigma = np.ascontiguousarray(np.broadcast_to(np.asarray(sigma, dtype=np.float64), s.shape))
    m = np.ascontiguousarray(np.broadcast_to(np.asarray(m, dtype=np.float64), s.shape))
    out = np.zeros(s.shape, dtype=np.float64)
    failed = _root_all(s.ravel(), sigma.ravel(), m.ravel(), tol, maxiter, out.ravel())
    return out, int(failed)


@njit(cache=True)
def _edges(index, dy, dx, corner):
    h, w = index.shape
    n = 0
    src = np.empty(h * w, dtype=np.int64)
    dst = np.empty(h * w, dtype=np.int64)
    for y in range(h):
        yy = y + dy
        if yy < 0 or yy >= h:
            continue
        for x in range(w):
            xx = x + dx
            if xx < 0 or xx >= w:
                continue
            i = index[y, x]
            j = index[yy, xx]
            if i < 0 or j < 0:
                continue
            if corner and dy != 0 and dx != 0:
                if index[yy, x] < 0 and index[y, xx] < 0:
                    continue
            src[n] = i
            dst[n] = j
            n += 1
    return src[:n], dst[:n]


def grid_edges(index, dy, dx, corner):
    return _edges(np.ascontiguousarray(index, dtype=np.int64), int(dy), int(dx), bool(corner))
