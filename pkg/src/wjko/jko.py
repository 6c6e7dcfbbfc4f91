"""Entropic JKO steps by Dykstra iterations in diagonal-scaling form.

One step solves ``min_pi KL(pi|xi) + (tau/gamma) f(pi 1)`` subject to
``pi' 1 = q``. The coupling is never formed: every Dykstra iterate is
``diag(a) xi diag(b)`` and its correction ``u v'``, so an iteration costs two
kernel applications.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernels import KernelOp
from .prox import ProxFn

log = logging.getLogger(__name__)

__all__ = [
    "FlowError",
    "ConvergenceError",
    "ScalingRangeError",
    "FlowParams",
    "ScalingState",
    "StepDiagnostics",
    "jko_step",
    "constraint_violation",
    "run_flow",
    "iter_flow",
]

# nonzero scaling entries must stay inside [SCALE_MIN, SCALE_MAX]
SCALE_MIN = 1e-300
SCALE_MAX = 1e300


class FlowError(RuntimeError):
    """A flow step could not be computed."""


class ConvergenceError(FlowError):
    def __init__(self, msg, violation=math.nan, iterations=0):
        super().__init__(msg)
        self.violation = violation
        self.iterations = iterations


class ScalingRangeError(FlowError):
    """Scaling vectors left the representable range."""


@dataclass(frozen=True)
class FlowParams:
    tau: float
    gamma: float
    eps: float = 1e-8
    max_inner: int = 10000
    steps: int = 0

    def __post_init__(self):
        for name in ("tau", "gamma", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.max_inner < 1:
            raise ValueError("max_inner must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")

    @property
    def sigma(self):
        """Prox strength ``tau / gamma`` applied to ``f``."""
        return self.tau / self.gamma


@dataclass
class ScalingState:
    """Factored Dykstra iterate: ``pi = diag(a) xi diag(b)``, ``z = u v'``.

    ``u_prev`` / ``v_prev`` hold the corrections from iteration ``ell - 1``,
    which the update at ``ell + 1`` consumes.
    """

    a: np.ndarray
    b: np.ndarray
    u: np.ndarray
    v: np.ndarray
    u_prev: np.ndarray
    v_prev: np.ndarray
    ell: int = 0
    p: np.ndarray | None = None

    @classmethod
    def initial(cls, n):
        one = np.ones(n)
        return cls(one, one, one, one, one, one, 0)


@dataclass
class StepDiagnostics:
    iterations: int
    violation: float
    mass: float = math.nan
    max_density: float = math.nan
    extra: dict = field(default_factory=dict)


def safe_ratio(num, den):
    """``num / den`` where ``0/0 = 0``; a positive numerator over 0 is an error."""
    zero = den == 0
    if not zero.any():
        return num / den
    if np.any(num[zero] != 0):
        raise ScalingRangeError("kernel product vanished on a supported entry: "
                                "gamma too small for this cost scale")
    out = np.zeros_like(num)
    nz = ~zero
    out[nz] = num[nz] / den[nz]
    return out


def correction(prev_corr, old, new):
    """``prev_corr * old / new``; entries where ``new`` is 0 are frozen."""
    zero = new == 0
    if not zero.any():
        return prev_corr * old / new
    out = prev_corr.copy()
    nz = ~zero
    out[nz] = prev_corr[nz] * old[nz] / new[nz]
    return out


def check_range(*vecs):
    for v in vecs:
        if not np.all(np.isfinite(v)):
            raise ScalingRangeError("non-finite scaling vector: gamma too small for this cost scale")
        nz = v[v != 0]
        if nz.size and (nz.min() < SCALE_MIN or nz.max() > SCALE_MAX):
            raise ScalingRangeError(
                f"scaling vector left [{SCALE_MIN:g}, {SCALE_MAX:g}]: gamma too small for this cost scale")


def prepare_marginal(q):
    q = np.array(q, dtype=np.float64).ravel()
    if not np.all(np.isfinite(q)) or np.any(q < 0):
        raise FlowError("density must be finite and nonnegative")
    # below the scaling range an entry is indistinguishable from an empty cell
    q[q < SCALE_MIN] = 0.0
    if not q.any():
        raise FlowError("density has zero mass")
    return q


def constraint_violation(state: ScalingState, kernel: KernelOp, q):
    """L1 distance between the column marginal ``b * xi'(a)`` and ``q``."""
    return float(np.abs(state.b * kernel.apply_transpose(state.a) - q).sum())


def dykstra_update(state: ScalingState, kernel: KernelOp, q, prox: ProxFn, sigma):
    """Advance the factored iterate by one Dykstra step (odd: constraint, even: prox)."""
    ell = state.ell + 1
    a, b = state.a, state.b
    u_pp, v_pp = state.u_prev, state.v_prev
    p = state.p
    if ell % 2 == 1:
        a_new = a * u_pp
        b_new = safe_ratio(q, kernel.apply_transpose(a_new))
    else:
        b_new = b * v_pp
        kb = kernel.apply(b_new)
        p = prox(a * u_pp * kb, sigma)
        a_new = safe_ratio(p, kb)
    u_new = correction(u_pp, a, a_new)
    v_new = correction(v_pp, b, b_new)
    check_range(a_new, b_new, u_new, v_new)
    return ScalingState(a_new, b_new, u_new, v_new, state.u, state.v, ell, p)


def jko_step(kernel: KernelOp, prox: ProxFn, q, params: FlowParams,
             trace: Callable[[ScalingState], None] | None = None):
    """One entropic JKO step from ``q``; returns ``(p, StepDiagnostics)``.

    Iterates until, after an even (prox) iteration, the column-marginal
    violation is at most ``params.eps`` in L1. The returned density is the
    last prox output, so it always lies in the domain of ``f``.
    """
    q = prepare_marginal(q)
    if q.size != kernel.n:
        raise FlowError(f"density has {q.size} entries, kernel has {kernel.n}")
    sigma = params.sigma
    state = ScalingState.initial(q.size)
    violation = math.inf
    while state.ell < params.max_inner:
        state = dykstra_update(state, kernel, q, prox, sigma)
        if trace is not None:
            trace(state)
        if state.ell % 2 == 0:
            violation = constraint_violation(state, kernel, q)
            if violation <= params.eps:
                p = state.p
                return p, StepDiagnostics(state.ell, violation, float(p.sum()), float(p.max()))
    raise ConvergenceError(f"Dykstra did not converge in {params.max_inner} iterations "
                           f"(violation {violation:.3e})", violation, state.ell)


def iter_flow(kernel: KernelOp, prox: ProxFn, p0, params: FlowParams):
    """Yield ``(t, p_t, diagnostics)`` for ``t = 0 .. params.steps``."""
    p = np.array(p0, dtype=np.float64)
    yield 0, p, None
    for t in range(1, params.steps + 1):
        try:
            p, diag = jko_step(kernel, prox, p, params)
        except FlowError as exc:
            raise type(exc)(f"step {t}: {exc}") from exc
        log.debug("step %d: %d iterations, violation %.3e", t, diag.iterations, diag.violation)
        yield t, p, diag


def run_flow(kernel: KernelOp, prox: ProxFn, p0, params: FlowParams, frame_sink=None):
    """Run ``params.steps`` JKO steps; returns the ``steps + 1`` frames.

    ``frame_sink(t, p, diagnostics)`` is called in order for every frame
    (``diagnostics`` is None for the initial one).
    """
    frames = []
    for t, p, diag in iter_flow(kernel, prox, p0, params):
        frames.append(p)
        if frame_sink is not None:
            frame_sink(t, p, diag)
    return frames
