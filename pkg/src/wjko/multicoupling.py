"""Diagonal-scaling Dykstra over several couplings, and the interaction flows built on it.

The problem solved is

    min_{pi_1..pi_M}  sum_m lambda_m KL(pi_m | xi_m) + psi1(pi_m 1) + psi2(pi_m' 1)

where ``psi1`` / ``psi2`` act jointly on the M row / column marginals and are
supplied as weighted-KL proximal operators (:class:`~wjko.prox.JointProx`).
Each coupling is kept factored as ``diag(a_m) xi_m diag(b_m)``.

Three flows of two densities are provided on top: attraction of one density
to a fixed target, pairwise attraction of two densities, and two densities
interacting only through their sum.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .jko import (ConvergenceError, FlowError, FlowParams, check_range, correction,
                  prepare_marginal, safe_ratio)
from .kernels import KernelOp
from .prox import JointProx, ProxFn, prox_equality, prox_identity, prox_shift, prox_singleton, prox_sum

log = logging.getLogger(__name__)

__all__ = [
    "MultiCouplingProblem",
    "MultiScalingState",
    "MultiResult",
    "AttractionSpec",
    "PairwiseSpec",
    "SumCouplingSpec",
    "generalized_scaling_solve",
    "attraction_psi",
    "pairwise_psi",
    "sum_coupling_psi",
    "AttractionFlow",
    "PairwiseFlow",
    "SumCouplingFlow",
    "run_multi_flow",
    "iter_multi_flow",
]


@dataclass(frozen=True, eq=False)
class MultiCouplingProblem:
    """Kernels, KL weights and the two joint marginal proxes.

    ``psi1`` and ``psi2`` are evaluated with strength ``sigma`` (usually
    ``tau / gamma``); singleton constraints ignore it.
    """

    kernels: tuple
    lambdas: tuple
    psi1: JointProx
    psi2: JointProx
    sigma: float = 1.0

    def __post_init__(self):
        kernels = tuple(self.kernels)
        lams = tuple(float(x) for x in self.lambdas)
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "lambdas", lams)
        if not kernels:
            raise ValueError("need at least one coupling")
        if len(lams) != len(kernels):
            raise ValueError(f"{len(kernels)} kernels but {len(lams)} weights")
        if min(lams) <= 0:
            raise ValueError("KL weights must be > 0")
        if len({k.n for k in kernels}) != 1:
            raise ValueError("all kernels must share the same dimension")
        gammas = {k.gamma for k in kernels}
        if len(gammas) != 1:
            raise ValueError(f"kernels use different gamma values {sorted(gammas)}; a shared gamma is required")
        for name in ("psi1", "psi2"):
            psi = getattr(self, name)
            if psi.m != len(kernels):
                raise ValueError(f"{name} acts on {psi.m} densities, problem has {len(kernels)} couplings")

    @property
    def m(self):
        return len(self.kernels)

    @property
    def n(self):
        return self.kernels[0].n


@dataclass
class MultiScalingState:
    """Per-coupling factors; ``u_prev``/``v_prev`` are the corrections from ``ell - 1``."""

    a: list
    b: list
    u: list
    v: list
    u_prev: list
    v_prev: list
    ell: int = 0
    rows: tuple | None = None
    cols: tuple | None = None
    col_gap: float = math.inf

    @classmethod
    def initial(cls, m, n):
        one = np.ones(n)
        return cls([one] * m, [one] * m, [one] * m, [one] * m, [one] * m, [one] * m, 0)


@dataclass
class MultiResult:
    """Latest outputs of ``psi1`` (rows) and ``psi2`` (cols) at termination."""

    rows: tuple
    cols: tuple
    iterations: int
    violation: float


def _update(state: MultiScalingState, problem: MultiCouplingProblem):
    ell = state.ell + 1
    ks = problem.kernels
    a_t = [a * u for a, u in zip(state.a, state.u_prev)]
    b_t = [b * v for b, v in zip(state.b, state.v_prev)]
    rows, cols, col_gap = state.rows, state.cols, state.col_gap
    if ell % 2 == 1:
        kb = [k.apply(b) for k, b in zip(ks, b_t)]
        rows = problem.psi1(tuple(a * x for a, x in zip(a_t, kb)), problem.sigma)
        a_new = [safe_ratio(p, x) for p, x in zip(rows, kb)]
        b_new = b_t
    else:
        ka = [k.apply_transpose(a) for k, a in zip(ks, a_t)]
        cols = problem.psi2(tuple(b * x for b, x in zip(b_t, ka)), problem.sigma)
        b_new = [safe_ratio(p, x) for p, x in zip(cols, ka)]
        a_new = a_t
        # column marginals are b_new * ka; they match cols up to rounding
        col_gap = sum(float(np.abs(b * x - c).sum()) for b, x, c in zip(b_new, ka, cols))
    u_new = [correction(u, a, an) for u, a, an in zip(state.u_prev, state.a, a_new)]
    v_new = [correction(v, b, bn) for v, b, bn in zip(state.v_prev, state.b, b_new)]
    check_range(*a_new, *b_new, *u_new, *v_new)
    return MultiScalingState(a_new, b_new, u_new, v_new, state.u, state.v, ell, rows, cols, col_gap)


def marginal_residual(state: MultiScalingState, problem: MultiCouplingProblem):
    """L1 gap between the current marginals and the latest prox outputs, summed over couplings.

    Valid after an even iteration, when the column gap is already known.
    """
    total = state.col_gap
    for k, a, b, r in zip(problem.kernels, state.a, state.b, state.rows):
        total += float(np.abs(a * k.apply(b) - r).sum())
    return total


def generalized_scaling_solve(problem: MultiCouplingProblem, eps=1e-8, max_inner=10000,
                              trace: Callable[[MultiScalingState], None] | None = None):
    """Run the multi-coupling Dykstra iterations to tolerance ``eps``.

    The stopping test is made after even iterations only: the row and column
    marginals of every coupling are compared with the latest ``psi1`` and
    ``psi2`` outputs.
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    state = MultiScalingState.initial(problem.m, problem.n)
    violation = math.inf
    while state.ell < max_inner:
        state = _update(state, problem)
        if trace is not None:
            trace(state)
        if state.ell % 2 == 0:
            violation = marginal_residual(state, problem)
            if violation <= eps:
                return MultiResult(state.rows, state.cols, state.ell, violation)
    raise ConvergenceError(f"multi-coupling Dykstra did not converge in {max_inner} iterations "
                           f"(violation {violation:.3e})", violation, state.ell)


# --------------------------------------------------------------------------
# joint proxes of the interaction functionals

@dataclass(frozen=True, eq=False)
class AttractionSpec:
    """Attraction toward a fixed target ``r`` plus an optional density constraint ``h``."""

    r: np.ndarray
    tau: float
    h: ProxFn | None = None

    def __post_init__(self):
        object.__setattr__(self, "r", prepare_marginal(self.r))
        if not self.tau > 0:
            raise ValueError("tau must be > 0")


@dataclass(frozen=True, eq=False)
class PairwiseSpec:
    """Two densities attracting each other with strength ``alpha``."""

    alpha: float
    tau: float
    h1: ProxFn | None = None
    h2: ProxFn | None = None
    w1: np.ndarray | float = 0.0
    w2: np.ndarray | float = 0.0
    normalized_exponents: bool = False

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")


@dataclass(frozen=True, eq=False)
class SumCouplingSpec:
    """Two densities with potentials ``w1``, ``w2`` coupled through ``h(p1 + p2)``."""

    h: ProxFn | None = None
    w1: np.ndarray | float = 0.0
    w2: np.ndarray | float = 0.0


def attraction_psi(spec: AttractionSpec, q):
    """Joint proxes for ``lambda = (1, tau)``: tied rows under ``h``, columns pinned to ``(q, r)``.

    The tied value is ``Prox_{sigma h / (1 + tau)}(p1^(1/(1+tau)) * p2^(tau/(1+tau)))``.
    """
    tau = float(spec.tau)
    h = prox_identity() if spec.h is None else spec.h
    e1, e2 = 1.0 / (1.0 + tau), tau / (1.0 + tau)

    def tied(ps, sigma):
        p = h(ps[0] ** e1 * ps[1] ** e2, sigma / (1.0 + tau))
        return p, p

    lams = (1.0, tau)
    psi1 = JointProx(tied, "attraction", lams, {"h": h})
    psi2 = prox_singleton((prepare_marginal(q), spec.r), lams)
    return psi1, psi2


def pairwise_psi(spec: PairwiseSpec, q1, q2):
    """Joint proxes for three couplings with ``lambda = (1, 1, tau*alpha)``.

    Coupling 1 moves ``q1`` to ``p1``, coupling 2 moves ``q2`` to ``p2`` (so
    its rows are pinned and its columns are free), coupling 3 transports
    ``p1`` onto ``p2``. ``psi1`` ties rows 1 and 3 and pins row 2 to ``q2``;
    ``psi2`` ties columns 2 and 3 and pins column 1 to ``q1``.

    The tied value uses exponents ``1/(1+tau*alpha)`` and ``tau/(1+tau*alpha)``
    by default; ``normalized_exponents`` switches the second to
    ``tau*alpha/(1+tau*alpha)`` so that the two sum to one.
    """
    tau, alpha = float(spec.tau), float(spec.alpha)
    lam3 = tau * alpha
    e_self = 1.0 / (1.0 + lam3)
    e_cross = (lam3 if spec.normalized_exponents else tau) / (1.0 + lam3)
    q1 = prepare_marginal(q1)
    q2 = prepare_marginal(q2)

    def with_potential(h, w):
        h = prox_identity() if h is None else h
        if np.any(np.asarray(w) != 0):
            # tilt seen by the tied prox, whose strength is sigma / (1 + lam3)
            h = prox_shift(h, w)
        return h

    h1 = with_potential(spec.h1, spec.w1)
    h2 = with_potential(spec.h2, spec.w2)
    eq1 = prox_equality(h1, (1.0, lam3), (e_self, e_cross))
    eq2 = prox_equality(h2, (1.0, lam3), (e_self, e_cross))

    def rows(ps, sigma):
        t1, t3 = eq1((ps[0], ps[2]), sigma)
        return t1, q2, t3

    def cols(ps, sigma):
        t2, t3 = eq2((ps[1], ps[2]), sigma)
        return q1, t2, t3

    lams = (1.0, 1.0, lam3)
    return (JointProx(rows, "pairwise-rows", lams, {"h": h1}),
            JointProx(cols, "pairwise-cols", lams, {"h": h2}))


def sum_coupling_psi(spec: SumCouplingSpec, q1, q2):
    """``psi1`` rescales both rows by ``Prox_h(a1 + a2) / (a1 + a2)`` after the potential tilt; ``psi2`` pins ``(q1, q2)``."""
    h = prox_identity() if spec.h is None else spec.h
    psi1 = prox_sum(h, 2)
    w1, w2 = np.asarray(spec.w1, dtype=float), np.asarray(spec.w2, dtype=float)
    if np.any(w1 != 0) or np.any(w2 != 0):
        psi1 = prox_shift(psi1, (w1, w2))
    psi2 = prox_singleton((prepare_marginal(q1), prepare_marginal(q2)))
    return psi1, psi2


# --------------------------------------------------------------------------
# flows

class _TwoDensityFlow:
    """One outer step: build the problem from the current densities, solve, read the new ones."""

    kernel: KernelOp
    densities = 2

    def problem(self, current, params: FlowParams) -> MultiCouplingProblem:
        raise NotImplementedError

    def read(self, result: MultiResult):
        raise NotImplementedError

    def step(self, current, params: FlowParams):
        problem = self.problem(current, params)
        res = generalized_scaling_solve(problem, params.eps, params.max_inner)
        return self.read(res), res


class AttractionFlow(_TwoDensityFlow):
    """Single density attracted to a target; the second frame slot repeats the target."""

    densities = 1

    def __init__(self, kernel: KernelOp, spec: AttractionSpec):
        self.kernel = kernel
        self.spec = spec

    def problem(self, current, params):
        psi1, psi2 = attraction_psi(self.spec, current[0])
        return MultiCouplingProblem((self.kernel, self.kernel), psi1.lambdas, psi1, psi2, params.sigma)

    def read(self, res):
        return (res.rows[0],)


class PairwiseFlow(_TwoDensityFlow):
    def __init__(self, kernel: KernelOp, spec: PairwiseSpec):
        self.kernel = kernel
        self.spec = spec

    def problem(self, current, params):
        if not math.isclose(self.spec.tau, params.tau):
            raise ValueError("pairwise spec and flow parameters disagree on tau")
        psi1, psi2 = pairwise_psi(self.spec, current[0], current[1])
        k = self.kernel
        return MultiCouplingProblem((k, k, k), psi1.lambdas, psi1, psi2, params.sigma)

    def read(self, res):
        # p1 is a tied row marginal, p2 a tied column marginal
        return res.rows[0], res.cols[1]


class SumCouplingFlow(_TwoDensityFlow):
    def __init__(self, kernel: KernelOp, spec: SumCouplingSpec):
        self.kernel = kernel
        self.spec = spec

    def problem(self, current, params):
        psi1, psi2 = sum_coupling_psi(self.spec, current[0], current[1])
        return MultiCouplingProblem((self.kernel, self.kernel), (1.0, 1.0), psi1, psi2, params.sigma)

    def read(self, res):
        return tuple(res.rows)


def iter_multi_flow(flow: _TwoDensityFlow, p0: Sequence, params: FlowParams):
    """Yield ``(t, densities, result)`` for ``t = 0 .. params.steps`` (``result`` is None at 0)."""
    current = tuple(np.array(p, dtype=np.float64).ravel() for p in p0)
    if len(current) != flow.densities:
        raise ValueError(f"flow evolves {flow.densities} densities, got {len(current)} initial frames")
    yield 0, current, None
    for t in range(1, params.steps + 1):
        try:
            current, res = flow.step(current, params)
        except FlowError as exc:
            raise type(exc)(f"step {t}: {exc}") from exc
        log.debug("step %d: %d iterations, violation %.3e", t, res.iterations, res.violation)
        yield t, current, res


def run_multi_flow(flow: _TwoDensityFlow, p0: Sequence, params: FlowParams, frame_sink=None):
    """Run ``params.steps`` outer steps; returns a list of per-step density tuples.

    ``frame_sink(t, densities, result)`` receives every frame in order.
    """
    frames = []
    for t, current, res in iter_multi_flow(flow, p0, params):
        frames.append(current)
        if frame_sink is not None:
            frame_sink(t, current, res)
    return frames
