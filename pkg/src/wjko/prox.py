"""KL proximal operators and the rules for combining them.

A proximal operator here maps ``(q, sigma)`` to
``argmin_p KL(p|q) + sigma * f(p)`` over ``p >= 0``, with
``KL(p|q) = sum p log(p/q) - p + q``. Single-density operators are
:class:`ProxFn`; operators over a tuple of densities (weighted KL,
``sum_m lambda_m KL(p_m|q_m)``) are :class:`JointProx`.

Every operator maps an exactly-zero input entry to zero, which the scaling
solvers rely on to keep dead rows and columns of a coupling inert.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import accel

__all__ = [
    "ProxError",
    "ProxFn",
    "JointProx",
    "CongestionSpec",
    "EntropySpec",
    "prox_identity",
    "prox_congestion",
    "prox_entropy_linear",
    "prox_gen_entropy",
    "prox_binary",
    "prox_shift",
    "prox_equality",
    "prox_sum",
    "prox_singleton",
    "prox_separable",
    "entropy_vec",
    "gen_entropy",
    "kl_divergence",
]


class ProxError(ArithmeticError):
    """A proximal evaluation failed to converge."""


@dataclass(frozen=True)
class ProxFn:
    """KL proximal operator of a functional on a single density."""

    func: Callable[[np.ndarray, float], np.ndarray]
    kind: str
    params: dict = field(default_factory=dict)
    convex: bool = True

    def __call__(self, q, sigma=1.0):
        return self.func(np.asarray(q, dtype=np.float64), float(sigma))

    def __repr__(self):
        return f"ProxFn({self.kind})"


@dataclass(frozen=True)
class JointProx:
    """KL_lambda proximal operator of a functional on ``M`` densities."""

    func: Callable[[tuple, float], tuple]
    kind: str
    lambdas: tuple
    params: dict = field(default_factory=dict)

    @property
    def m(self):
        return len(self.lambdas)

    def __call__(self, qs, sigma=1.0):
        qs = tuple(np.asarray(q, dtype=np.float64) for q in qs)
        if len(qs) != self.m:
            raise ValueError(f"{self.kind}: expected {self.m} densities, got {len(qs)}")
        return tuple(self.func(qs, float(sigma)))

    def __repr__(self):
        return f"JointProx({self.kind}, lambdas={self.lambdas})"


@dataclass(frozen=True, eq=False)
class CongestionSpec:
    """Box constraint ``0 <= p <= kappa`` plus a linear potential ``<w, p>``."""

    kappa: float | np.ndarray
    w: np.ndarray | float = 0.0

    def __post_init__(self):
        if not np.all(np.asarray(self.kappa) > 0):
            raise ValueError("kappa must be > 0")
        if not np.all(np.isfinite(self.w)):
            raise ValueError("potential must be finite")


@dataclass(frozen=True, eq=False)
class EntropySpec:
    """Generalized entropy ``sum_i b_i e_{m_i}(p_i)``."""

    b: np.ndarray | float = 1.0
    m: np.ndarray | float = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.b) < 0):
            raise ValueError("entropy weights b must be >= 0")
        if np.any(np.asarray(self.m) < 1):
            raise ValueError("entropy exponents m must be >= 1")


def prox_identity():
    """Prox of ``f = 0``."""
    return ProxFn(lambda q, sigma: q.copy(), "zero")


def prox_congestion(q=None, sigma=None, spec: CongestionSpec | None = None):
    """``min(q * exp(-sigma * w), kappa)`` entrywise.

    Called with a spec only (``prox_congestion(spec=...)``) it returns the
    :class:`ProxFn`; called with ``q`` and ``sigma`` as well it evaluates.
    """
    if spec is None:
        raise TypeError("prox_congestion needs a CongestionSpec")
    kappa = np.asarray(spec.kappa, dtype=float)
    w = np.asarray(spec.w, dtype=float)

    def f(q, sigma):
        if np.any(w != 0):
            q = q * np.exp(-sigma * w)
        return np.minimum(q, kappa)

    fn = ProxFn(f, "congestion", {"kappa": spec.kappa, "w": spec.w})
    return fn if q is None else fn(q, sigma)


def _entropy_linear(q, sigma):
    return q ** (1.0 / (1.0 + sigma))


def prox_entropy_linear(q=None, sigma=None):
    """Prox of the entropy ``s(log s - 1)``: ``q ** (1 / (1 + sigma))``."""
    fn = ProxFn(_entropy_linear, "entropy")
    return fn if q is None else fn(q, sigma)


def prox_gen_entropy(q=None, sigma=None, spec: EntropySpec | None = None, maxiter=100):
    """Prox of ``sum_i b_i e_{m_i}``; entries with ``m_i = 1`` use the closed form.

    For ``m > 1`` the output is the positive root ``psi`` of
    ``log(psi) + m s (psi^(m-1) - 1)/(m-1) = log(q)`` with ``s = sigma*b``,
    found by safeguarded Newton iterations in ``log(psi)``.
    """
    spec = EntropySpec() if spec is None else spec
    b = np.asarray(spec.b, dtype=float)
    m = np.asarray(spec.m, dtype=float)

    def f(q, sigma):
        sig = sigma * np.broadcast_to(b, q.shape)
        psi, failed = accel.gen_entropy_root(q, sig, np.broadcast_to(m, q.shape), 1e-12, maxiter)
        if failed >= 0:
            raise ProxError(f"Newton solve for the entropy prox did not converge at entry {failed}")
        return psi

    fn = ProxFn(f, "gen_entropy", {"b": spec.b, "m": spec.m})
    return fn if q is None else fn(q, sigma)


def prox_binary(q=None, sigma=None, kappa=1.0, w=0.0):
    """Prox of the non-convex ``iota_{0, kappa}^N + <w, p>``.

    After the tilt ``q * exp(-sigma w)`` each entry snaps to ``kappa`` above
    ``kappa/e`` and to 0 otherwise; the tie at exactly ``kappa/e`` goes to 0.
    """
    kappa_a = np.asarray(kappa, dtype=float)
    w = np.asarray(w, dtype=float)
    thresh = kappa_a / math.e

    def f(q, sigma):
        if np.any(w != 0):
            q = q * np.exp(-sigma * w)
        return np.where(q > thresh, kappa_a, 0.0) * np.ones_like(q)

    fn = ProxFn(f, "binary", {"kappa": kappa, "w": w}, convex=False)
    return fn if q is None else fn(q, sigma)


def prox_separable(parts: Sequence[ProxFn]):
    """Independent proxes on each density of a tuple (unit weights assumed)."""
    parts = tuple(parts)
    return JointProx(lambda qs, sigma: tuple(p(q, sigma) for p, q in zip(parts, qs)),
                     "separable", (1.0,) * len(parts), {"parts": parts})


def prox_shift(inner, w, lambdas=None):
    """Add linear terms ``<w_m, p_m>``: tilt each input by ``exp(-sigma w_m / lambda_m)``.

    ``inner`` may be a :class:`ProxFn` (then ``w`` is one potential, or a
    one-element list) or a :class:`JointProx` with one potential per density.
    """
    if isinstance(inner, ProxFn):
        ws = w if isinstance(w, (list, tuple)) else [w]
        if len(ws) != 1:
            raise ValueError("a single-density prox takes exactly one potential")
        lam = 1.0 if lambdas is None else float(np.atleast_1d(lambdas)[0])
        if not lam > 0:
            raise ValueError("weights must be > 0")
        wv = np.asarray(ws[0], dtype=float)
        return ProxFn(lambda q, sigma: inner(q * np.exp(-sigma * wv / lam), sigma),
                      f"shift({inner.kind})", {"w": wv, "inner": inner}, inner.convex)

    lams = inner.lambdas if lambdas is None else tuple(float(x) for x in lambdas)
    if len(w) != inner.m or len(lams) != inner.m:
        raise ValueError("need one potential and one weight per density")
    if min(lams) <= 0:
        raise ValueError("weights must be > 0")
    ws = tuple(np.asarray(x, dtype=float) for x in w)

    def f(qs, sigma):
        return inner(tuple(q * np.exp(-sigma * wm / lm) for q, wm, lm in zip(qs, ws, lams)), sigma)

    return JointProx(f, f"shift({inner.kind})", lams, {"w": ws, "inner": inner})


def _geo_mean(qs, weights):
    out = np.ones_like(qs[0])
    for q, e in zip(qs, weights):
        out = out * q ** e
    return out


def prox_equality(inner: ProxFn | None, lambdas, exponents=None):
    """Prox of ``iota_{p_1 = ... = p_M} + h(p_1)``.

    The common value is ``Prox_{h / sum(lambda)}`` of the weighted geometric
    mean ``prod p_m ** (lambda_m / sum(lambda))``. ``exponents`` overrides the
    geometric-mean exponents (used to reproduce non-normalized variants).
    """
    lams = tuple(float(x) for x in lambdas)
    if min(lams) <= 0:
        raise ValueError("weights must be > 0")
    total = sum(lams)
    expo = tuple(l / total for l in lams) if exponents is None else tuple(float(e) for e in exponents)
    inner = prox_identity() if inner is None else inner

    def f(qs, sigma):
        p = inner(_geo_mean(qs, expo), sigma / total)
        return (p,) * len(qs)

    return JointProx(f, f"equality({inner.kind})", lams, {"inner": inner, "exponents": expo})


def prox_sum(inner: ProxFn | None, m=2):
    """Prox of ``h(p_1 + ... + p_M)`` for unit weights: common rescaling of all inputs."""
    inner = prox_identity() if inner is None else inner

    def f(qs, sigma):
        s = qs[0].copy()
        for q in qs[1:]:
            s += q
        ps = inner(s, sigma)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(s > 0, ps / s, 0.0)
        return tuple(q * ratio for q in qs)

    return JointProx(f, f"sum({inner.kind})", (1.0,) * m, {"inner": inner})


def prox_singleton(targets, lambdas=None):
    """Prox of the indicator of one fixed tuple: always returns the targets."""
    targets = tuple(np.array(t, dtype=np.float64) for t in targets)
    for t in targets:
        t.setflags(write=False)
    lams = (1.0,) * len(targets) if lambdas is None else tuple(float(x) for x in lambdas)
    return JointProx(lambda qs, sigma: targets, "singleton", lams, {"targets": targets})


def entropy_vec(p):
    """``sum p (log p - 1)`` with ``0 log 0 = 0``; +inf for negative entries."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        return math.inf
    pos = p[p > 0]
    return float(np.sum(pos * (np.log(pos) - 1.0)))


def gen_entropy(p, b=1.0, m=1.0):
    """``sum_i b_i e_{m_i}(p_i)``."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        return math.inf
    b = np.broadcast_to(np.asarray(b, dtype=float), p.shape)
    m = np.broadcast_to(np.asarray(m, dtype=float), p.shape)
    out = np.zeros_like(p)
    one = m == 1.0
    pos = one & (p > 0)
    out[pos] = p[pos] * (np.log(p[pos]) - 1.0)
    k = ~one
    out[k] = p[k] * (p[k] ** (m[k] - 1.0) - m[k]) / (m[k] - 1.0)
    return float(np.sum(b * out))


def kl_divergence(p, q):
    """``sum p log(p/q) - p + q`` with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    pos = p > 0
    return float(np.sum(p[pos] * np.log(p[pos] / q[pos])) - p.sum() + q.sum())
