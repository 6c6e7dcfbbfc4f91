"""Brute-force reference solvers on explicit small matrices.

These share no code with the scaling solvers: the coupling is a full matrix
and the optimization problems are handed to generic scipy minimizers.

* :func:`dense_dykstra` runs the KL Dykstra iterations on full matrices.
* :func:`primal_jko` minimizes ``KL(pi|xi) + sigma f(pi 1)`` over couplings
  with column marginal ``q`` for smooth ``f`` (zero, entropies, linear terms).
* :func:`box_jko` solves the box-constrained step through its concave dual.
* :func:`linear_kl_oracle` solves a weighted-KL problem over several
  couplings under linear marginal constraints (pins and ties) via its dual.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax

__all__ = [
    "random_instance",
    "dense_dykstra",
    "primal_jko",
    "box_jko",
    "linear_kl_oracle",
    "Constraint",
]


def random_instance(n, seed, gamma=None):
    """Random points in the unit square with squared-distance cost.

    Returns ``(xi, q, cost, gamma)``; ``xi`` is symmetric with unit diagonal
    and entries in (0, 1]. ``q`` is a random positive density of unit mass.
    """
    rng = np.random.default_rng(seed)
    x = rng.random((n, 2))
    cost = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    if gamma is None:
        gamma = 0.25 * max(cost.max(), 1e-3)
    xi = np.exp(-cost / gamma)
    q = rng.random(n) + 0.1
    q /= q.sum()
    return xi, q, cost, gamma


def dense_dykstra(xi, q, prox, sigma, iterations):
    """Explicit Dykstra iterates ``(pi, z)`` for ``iterations`` steps.

    Odd steps project onto the column constraint ``pi' 1 = q``, even steps
    apply ``prox`` (a callable ``(vector, sigma) -> vector``) to the row sums.
    Returns the list of ``(pi_l, z_l)`` for ``l = 1 .. iterations``.
    """
    xi = np.asarray(xi, dtype=float)
    pi = xi.copy()
    z_prev = np.ones_like(xi)   # z^(l-2)
    z = np.ones_like(xi)        # z^(l-1)
    out = []
    for ell in range(1, iterations + 1):
        y = pi * z_prev
        if ell % 2 == 1:
            new = y * (q / y.sum(axis=0))[None, :]
        else:
            r = y.sum(axis=1)
            new = y * (prox(r, sigma) / r)[:, None]
        z_new = z_prev * pi / new
        pi, z_prev, z = new, z, z_new
        out.append((pi.copy(), z.copy()))
    return out


def _entropy_grad(r, m):
    if m == 1.0:
        return np.log(r)
    return m * (r ** (m - 1.0) - 1.0) / (m - 1.0)


def _entropy_val(r, m):
    if m == 1.0:
        return float(np.sum(r * (np.log(r) - 1.0)))
    return float(np.sum(r * (r ** (m - 1.0) - m) / (m - 1.0)))


def _newton_polish(fun, x, gtol, free=None, lower=None, rounds=30):
    """Newton steps on ``fun`` (returns value, gradient) from ``x``.

    The Hessian is a central difference of the exact gradient and may be
    singular along gauge directions (lstsq). ``free`` restricts the step to a
    subset of coordinates; ``lower`` clips after each step.
    """
    x = x.copy()
    idx = np.arange(x.size) if free is None else np.flatnonzero(free)

    def gnorm(z):
        return float(np.linalg.norm(fun(z)[1][idx], np.inf))

    for _ in range(rounds):
        g = fun(x)[1]
        cur = float(np.linalg.norm(g[idx], np.inf))
        if cur <= gtol or idx.size == 0:
            break
        hess = np.empty((idx.size, idx.size))
        for j, i in enumerate(idx):
            h = 1e-6 * max(1.0, abs(x[i]))
            e = np.zeros_like(x)
            e[i] = h
            hess[:, j] = (fun(x + e)[1][idx] - fun(x - e)[1][idx]) / (2 * h)
        hess = 0.5 * (hess + hess.T)
        step = np.linalg.lstsq(hess, g[idx], rcond=1e-12)[0]
        t = 1.0
        while t > 1e-8:
            cand = x.copy()
            cand[idx] -= t * step
            if lower is not None:
                cand = np.maximum(cand, lower)
            if gnorm(cand) < cur:
                x = cand
                break
            t *= 0.5
        else:
            break
    return x


def primal_jko(xi, q, sigma, m=None, w=None, gtol=1e-12):
    """Row marginal of ``argmin KL(pi|xi) + sigma (e_m(pi 1) + <w, pi 1>)`` with ``pi' 1 = q``.

    ``m=None`` drops the entropy term. Columns are parametrized as
    ``q_j softmax(theta_j)`` so the constraint holds by construction, and
    the smooth objective goes to L-BFGS. Returns ``(p, pi, grad_norm)``.
    """
    xi = np.asarray(xi, dtype=float)
    q = np.asarray(q, dtype=float)
    n = xi.shape[0]
    logxi = np.log(xi)
    logq = np.log(q)
    wv = np.zeros(n) if w is None else np.asarray(w, dtype=float)

    def fun(theta):
        th = theta.reshape(n, n)
        logs = log_softmax(th, axis=0)
        s = np.exp(logs)
        pi = s * q[None, :]
        logpi = logs + logq[None, :]
        r = pi.sum(axis=1)
        val = float(np.sum(pi * (logpi - logxi) - pi + xi))
        g_row = wv.copy()
        val += sigma * float(wv @ r)
        if m is not None:
            val += sigma * _entropy_val(r, m)
            g_row = g_row + _entropy_grad(r, m)
        G = logpi - logxi + sigma * g_row[:, None]
        grad = pi * (G - (s * G).sum(axis=0)[None, :])
        return val, grad.ravel()

    theta0 = logxi.copy()
    res = minimize(fun, theta0.ravel(), jac=True, method="L-BFGS-B",
                   options={"maxiter": 200000, "maxcor": 50, "ftol": 0.0, "gtol": gtol})
    x = _newton_polish(fun, res.x, gtol)
    th = x.reshape(n, n)
    pi = np.exp(log_softmax(th, axis=0)) * q[None, :]
    gnorm = float(np.linalg.norm(fun(x)[1], np.inf))
    return pi.sum(axis=1), pi, gnorm


def box_jko(xi, q, sigma, kappa, w=None, gtol=1e-13):
    """Step for ``f = iota_{[0,kappa]} + <w, .>`` through the dual.

    The dual variables are column potentials ``beta`` (free) and row
    multipliers ``mu >= 0`` for ``pi 1 <= kappa``; at the optimum
    ``pi_ij = xi_ij exp(beta_j - mu_i - sigma w_i)``. Returns ``(p, pi, grad_norm)``.
    """
    xi = np.asarray(xi, dtype=float)
    q = np.asarray(q, dtype=float)
    n = xi.shape[0]
    logxi = np.log(xi)
    wv = np.zeros(n) if w is None else np.asarray(w, dtype=float)
    kap = np.broadcast_to(np.asarray(kappa, dtype=float), (n,))

    def coupling(x):
        beta, mu = x[:n], x[n:]
        return np.exp(logxi + beta[None, :] - (mu + sigma * wv)[:, None])

    def negdual(x):
        beta, mu = x[:n], x[n:]
        pi = coupling(x)
        val = -(float(beta @ q) - float(mu @ kap) - float(pi.sum()))
        g_beta = -(q - pi.sum(axis=0))
        g_mu = -(-kap + pi.sum(axis=1))
        return val, np.concatenate([g_beta, g_mu])

    x0 = np.concatenate([np.log(q), np.zeros(n)])
    bounds = [(None, None)] * n + [(0.0, None)] * n
    res = minimize(negdual, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": 200000, "maxcor": 50, "ftol": 0.0, "gtol": gtol})
    # polish on beta and the multipliers that are already positive
    free = np.concatenate([np.ones(n, bool), res.x[n:] > 0])
    lower = np.concatenate([np.full(n, -np.inf), np.zeros(n)])
    x = _newton_polish(negdual, res.x, gtol, free, lower)
    pi = coupling(x)
    g = negdual(x)[1]
    # projected gradient: ignore components pushing mu below zero at the bound
    at_bound = np.concatenate([np.zeros(n, bool), x[n:] <= 0]) & (g > 0)
    gnorm = float(np.linalg.norm(np.where(at_bound, 0.0, g), np.inf))
    return pi.sum(axis=1), pi, gnorm


class Constraint:
    """Linear marginal constraint ``sum_k sign_k * marginal_k = rhs``.

    ``terms`` is a list of ``(coupling_index, "row" | "col", sign)``.
    """

    def __init__(self, terms, rhs):
        self.terms = list(terms)
        self.rhs = np.asarray(rhs, dtype=float)


def linear_kl_oracle(xis, lambdas, constraints, gtol=1e-13):
    """Minimize ``sum_m lambda_m KL(pi_m | xi_m)`` under marginal constraints.

    Linear potentials can be folded into the ``xi_m`` beforehand. The dual is
    smooth and unconstrained: with multipliers ``y_c``,
    ``log pi_m = log xi_m + (sum_c sign * y_c broadcast along the marginal) / lambda_m``.
    Returns ``(couplings, grad_norm)``.
    """
    xis = [np.asarray(x, dtype=float) for x in xis]
    logs = [np.log(x) for x in xis]
    lams = [float(x) for x in lambdas]
    n = xis[0].shape[0]
    nc = len(constraints)

    def couplings(y):
        expo = [np.zeros((n, n)) for _ in xis]
        for c, con in enumerate(constraints):
            yc = y[c * n:(c + 1) * n]
            for k, side, sign in con.terms:
                expo[k] += sign * (yc[:, None] if side == "row" else yc[None, :])
        return [np.exp(lx + e / lam) for lx, e, lam in zip(logs, expo, lams)]

    def negdual(y):
        pis = couplings(y)
        val = -sum(float(con.rhs @ y[c * n:(c + 1) * n]) for c, con in enumerate(constraints))
        val += sum(lam * float(p.sum()) for lam, p in zip(lams, pis))
        grad = np.empty(nc * n)
        for c, con in enumerate(constraints):
            marg = np.zeros(n)
            for k, side, sign in con.terms:
                marg += sign * (pis[k].sum(axis=1) if side == "row" else pis[k].sum(axis=0))
            grad[c * n:(c + 1) * n] = marg - con.rhs
        return val, grad

    def hessian(y):
        pis = couplings(y)
        hess = np.zeros((nc * n, nc * n))
        for c, con in enumerate(constraints):
            for i in range(n):
                dpis = [np.zeros((n, n)) for _ in xis]
                for k, side, sign in con.terms:
                    if side == "row":
                        dpis[k][i, :] += sign * pis[k][i, :] / lams[k]
                    else:
                        dpis[k][:, i] += sign * pis[k][:, i] / lams[k]
                for c2, con2 in enumerate(constraints):
                    col = np.zeros(n)
                    for k, side, sign in con2.terms:
                        col += sign * (dpis[k].sum(axis=1) if side == "row" else dpis[k].sum(axis=0))
                    hess[c2 * n:(c2 + 1) * n, c * n + i] = col
        return hess

    res = minimize(negdual, np.zeros(nc * n), jac=True, method="L-BFGS-B",
                   options={"maxiter": 200000, "maxcor": 50, "ftol": 0.0, "gtol": gtol})
    y = res.x
    # Newton polish; the Hessian is singular along gauge directions, hence lstsq
    for _ in range(20):
        grad = negdual(y)[1]
        if np.linalg.norm(grad, np.inf) <= gtol:
            break
        y = y - np.linalg.lstsq(hessian(y), grad, rcond=1e-14)[0]
    gnorm = float(np.linalg.norm(negdual(y)[1], np.inf))
    return couplings(y), gnorm

