"""Pure-numpy versions of the hot kernels (reference path)."""
import numpy as np


def gen_entropy_root(s, sigma, m, tol=1e-12, maxiter=100):
    """Solve log(psi) + m*sigma*(psi**(m-1) - 1)/(m-1) = log(s) entrywise.

    Newton iterations run on t = log(psi), starting from the right end of a
    bracket so that convexity of the residual keeps the iterates monotone.
    Returns ``(psi, failed)`` where ``failed`` is the first entry index that
    did not converge, or -1.
    """
    s = np.asarray(s, dtype=np.float64)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), s.shape)
    m = np.broadcast_to(np.asarray(m, dtype=np.float64), s.shape)
    psi = np.zeros_like(s)

    pos = s > 0
    lin = pos & (m == 1.0)
    psi[lin] = s[lin] ** (1.0 / (1.0 + sigma[lin]))
    free = pos & (m != 1.0) & (sigma == 0.0)
    psi[free] = s[free]

    idx = np.flatnonzero(pos & (m != 1.0) & (sigma != 0.0))
    if idx.size == 0:
        return psi, -1
    ls = np.log(s[idx])
    k = m[idx] - 1.0
    c = m[idx] * sigma[idx]
    up = ls > 0
    t_up = np.full_like(ls, np.inf)
    t_up[up] = np.log1p(ls[up] * k[up] / c[up]) / k[up]
    hi = np.where(up, np.minimum(ls, t_up), 0.0)
    lo = np.where(up, 0.0, ls)
    t = hi.copy()

    active = np.ones(idx.size, dtype=bool)
    for _ in range(maxiter):
        a = np.flatnonzero(active)
        if a.size == 0:
            break
        ta, ka, ca = t[a], k[a], c[a]
        g = ta + ca * np.expm1(ka * ta) / ka - ls[a]
        gp = 1.0 + ca * np.exp(ka * ta)
        done = np.abs(g) <= tol
        # one more Newton step takes the residual down to rounding level
        t[a[done]] = ta[done] - g[done] / gp[done]
        active[a[done]] = False
        a, g, gp, ta, ka, ca = a[~done], g[~done], gp[~done], ta[~done], ka[~done], ca[~done]
        if a.size == 0:
            break
        # bracket update from the sign of the residual
        hi[a] = np.where(g > 0, ta, hi[a])
        lo[a] = np.where(g < 0, ta, lo[a])
        tn = ta - g / gp
        bad = ~np.isfinite(tn) | (tn < lo[a]) | (tn > hi[a])
        tn[bad] = 0.5 * (lo[a][bad] + hi[a][bad])
        stalled = tn == ta
        t[a] = tn
        active[a[stalled]] = False
    else:
        a = np.flatnonzero(active)
        if a.size:
            return psi, int(idx[a[0]])

    psi[idx] = np.exp(t)
    return psi, -1


def grid_edges(index, dy, dx, corner):
    """Pairs (i, j) of active cells linked by the offset (dy, dx).

    ``index`` holds the node number of each cell or -1 when masked. With
    ``corner`` set, a diagonal link also needs one of the two cells it cuts
    past to be active.
    """
    h, w = index.shape
    y0, y1 = max(0, -dy), min(h, h - dy)
    x0, x1 = max(0, -dx), min(w, w - dx)
    if y1 <= y0 or x1 <= x0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    src = index[y0:y1, x0:x1]
    dst = index[y0 + dy:y1 + dy, x0 + dx:x1 + dx]
    ok = (src >= 0) & (dst >= 0)
    if corner and dy != 0 and dx != 0:
        c1 = index[y0 + dy:y1 + dy, x0:x1]
        c2 = index[y0:y1, x0 + dx:x1 + dx]
        ok &= (c1 >= 0) | (c2 >= 0)
    return src[ok].astype(np.int64), dst[ok].astype(np.int64)
