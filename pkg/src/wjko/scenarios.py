"""Turn a :class:`~wjko.config.ScenarioConfig` into domains, kernels and proxes, and run it."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ANISOTROPY_WARN, ConfigWarning, ScenarioConfig
from .domain import DomainSpec, load_mesh_off, make_grid_domain, normalize_density
from .io import (DiagnosticsWriter, Manifest, frame_meta_for, load_pgm_field, load_pgm_mask,
                 load_raw_field, write_frame, write_pgm)
from .jko import FlowParams, iter_flow
from .kernels import (AnisotropyField, HeatKernelConfig, gaussian_grid_kernel, heat_kernel,
                      laplacian_for)
from .multicoupling import (AttractionFlow, AttractionSpec, PairwiseFlow, PairwiseSpec,
                            SumCouplingFlow, SumCouplingSpec, iter_multi_flow)
from .prox import (CongestionSpec, EntropySpec, ProxFn, prox_binary, prox_congestion, prox_entropy_linear,
                   prox_gen_entropy)

log = logging.getLogger(__name__)

__all__ = ["Scenario", "build_scenario", "run_scenario", "resolve_field", "density_ids"]


def resolve_field(spec: dict, domain: DomainSpec, rng: np.random.Generator):
    """Evaluate a validated field generator on the domain nodes."""
    n = domain.n
    xy = domain.coordinates()
    if "constant" in spec:
        return np.full(n, spec["constant"])
    if "bumps" in spec:
        out = np.full(n, spec.get("floor", 0.0))
        for b in spec["bumps"]:
            d2 = _sqdist(xy, b["center"])
            out += b["weight"] * np.exp(-d2 / (2.0 * b["sigma"] ** 2))
        return out
    if "disk" in spec:
        d2 = _sqdist(xy, spec["disk"]["center"])
        return (d2 <= spec["disk"]["radius"] ** 2).astype(float)
    if "random" in spec:
        return rng.uniform(spec["random"]["low"], spec["random"]["high"], n)
    if "linear" in spec:
        g = np.asarray(spec["linear"])
        if g.size != xy.shape[1]:
            raise ValueError(f"linear field has {g.size} components, domain is {xy.shape[1]}-D")
        return xy @ g + spec.get("offset", 0.0)
    if "quadratic" in spec:
        return spec["quadratic"]["scale"] * _sqdist(xy, spec["quadratic"]["center"])
    if "raw" in spec:
        return load_raw_field(spec["raw"], domain)
    if "pgm" in spec:
        if not domain.is_grid:
            raise ValueError("PGM fields need a grid domain")
        return load_pgm_field(spec["pgm"], spec["min"], spec["max"], domain)
    raise ValueError(f"unknown field spec {sorted(spec)}")


def _sqdist(xy, center):
    c = np.asarray(center, dtype=float)
    if c.size != xy.shape[1]:
        raise ValueError(f"center has {c.size} coordinates, domain is {xy.shape[1]}-D")
    return ((xy - c) ** 2).sum(axis=1)


def density_ids(count):
    return ("p",) if count == 1 else tuple(f"p{i + 1}" for i in range(count))


@dataclass
class Scenario:
    config: ScenarioConfig
    domain: DomainSpec
    kernel: object
    params: FlowParams
    initial: tuple
    engine: object        # ProxFn for single-density flows, a flow object otherwise
    kappa: float | None = None

    @property
    def single(self):
        """True when the engine is a plain prox, solved by the one-coupling iteration."""
        return isinstance(self.engine, ProxFn)

    def frames(self):
        """Yield ``(t, densities tuple, diagnostics-like)`` for every step."""
        if self.single:
            for t, p, diag in iter_flow(self.kernel, self.engine, self.initial[0], self.params):
                yield t, (p,), diag
        else:
            yield from iter_multi_flow(self.engine, self.initial, self.params)


def _build_domain(cfg: ScenarioConfig):
    d = cfg.domain
    if d.type == "mesh":
        return load_mesh_off(str(d.mesh))
    mask = None if d.mask is None else load_pgm_mask(d.mask, d.width, d.height)
    return make_grid_domain(d.width, d.height, d.spacing, mask)


def _build_kernel(cfg: ScenarioConfig, domain: DomainSpec):
    k = cfg.kernel
    if k.type == "gaussian":
        return gaussian_grid_kernel(domain, k.gamma)
    tensors = None
    if isinstance(k.anisotropy, dict):
        tensors = AnisotropyField.circular(domain, k.anisotropy["circular"], k.anisotropy["center"])
    elif k.anisotropy is not None:
        tensors = AnisotropyField.from_csv(k.anisotropy, domain)
        if tensors.ratio() > ANISOTROPY_WARN:
            warnings.warn(f"anisotropy ratio {tensors.ratio():.3g} exceeds {ANISOTROPY_WARN:g}; "
                          "the finite-difference stencil is only accurate for moderate ratios", ConfigWarning)
    lap = laplacian_for(domain, tensors)
    return heat_kernel(lap, HeatKernelConfig(k.gamma, k.L, k.tol, k.solver))


def _kappa(fun, reference):
    if "kappa" in fun:
        return fun["kappa"]
    if "kappa_ratio" in fun:
        return fun["kappa_ratio"] * float(np.max(reference))
    return None


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    domain = _build_domain(cfg)
    kernel = _build_kernel(cfg, domain)
    rng = np.random.default_rng(cfg.seed)
    initial = tuple(normalize_density(resolve_field(f, domain, rng)) for f in cfg.initial)
    params = FlowParams(cfg.flow.tau, cfg.kernel.gamma, cfg.flow.eps, cfg.flow.max_inner, cfg.flow.steps)
    fun = cfg.functional
    field = lambda spec: resolve_field(spec, domain, rng)  # noqa: E731
    # kappa_ratio refers to the first density, or to the sum of both
    kappa = _kappa(fun, sum(initial))
    kind = cfg.scenario

    if kind == "congestion_crowd":
        engine = prox_congestion(spec=CongestionSpec(kappa, field(fun["potential"])))
    elif kind == "binary_crowd":
        engine = prox_binary(kappa=kappa, w=field(fun["potential"]))
    elif kind == "nonlinear_diffusion":
        m, b = field(fun["m"]), field(fun["b"])
        if np.any(m < 1) or np.any(b < 0):
            raise ValueError("entropy exponents must be >= 1 and weights >= 0")
        if np.all(m == 1) and np.all(b == 1):
            engine = prox_entropy_linear()
        else:
            engine = prox_gen_entropy(spec=EntropySpec(b, m))
    elif kind == "wasserstein_attraction":
        target = normalize_density(field(fun["target"]))
        h = None if kappa is None else prox_congestion(spec=CongestionSpec(kappa))
        engine = AttractionFlow(kernel, AttractionSpec(target, cfg.flow.tau, h))
    elif kind == "pairwise_attraction":
        h = None if kappa is None else prox_congestion(spec=CongestionSpec(kappa))
        w1, w2 = (field(w) for w in fun["potentials"])
        engine = PairwiseFlow(kernel, PairwiseSpec(fun["alpha"], cfg.flow.tau, h, h, w1, w2,
                                                   fun["normalized_exponents"]))
    elif kind == "sum_coupling":
        if fun["coupling"] == "entropy":
            h = prox_entropy_linear()
        else:
            h = prox_congestion(spec=CongestionSpec(kappa))
        w1, w2 = (field(w) for w in fun["potentials"])
        engine = SumCouplingFlow(kernel, SumCouplingSpec(h, w1, w2))
    else:  # pragma: no cover - parse_config rejects unknown kinds
        raise ValueError(kind)
    return Scenario(cfg, domain, kernel, params, initial, engine, kappa)


@dataclass
class RunSummary:
    frames: list
    out_dir: Path
    diagnostics: Path


def run_scenario(scenario: Scenario, out_dir) -> RunSummary:
    """Write frames ``<density-id>-<step>.dat``, ``diagnostics.csv`` and ``MANIFEST``.

    The manifest is rewritten after every frame, so an interrupted run leaves
    a record of what completed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dom = scenario.domain
    meta = frame_meta_for(dom)
    ids = density_ids(len(scenario.initial))
    if dom.is_grid and not dom.full:
        write_pgm(out / "mask.pgm", dom.mask.astype(np.uint8) * 255)
    extra = [c for i in ids[1:] for c in (f"mass_{i}", f"max_density_{i}")]
    diag = DiagnosticsWriter(out / "diagnostics.csv", extra)
    manifest = Manifest(out)
    width = max(4, len(str(scenario.params.steps)))
    written = []
    try:
        for t, ps, d in scenario.frames():
            for name, p in zip(ids, ps):
                fname = f"{name}-{t:0{width}d}.dat"
                write_frame(p, meta, out / fname)
                manifest.add(fname)
                written.append(fname)
            if t > 0:
                cols = [t, d.iterations, d.violation]
                for p in ps:
                    cols += [float(p.sum()), float(p.max())]
                diag.row(*cols)
    except BaseException:
        manifest.close("failed")
        raise
    manifest.close("complete")
    return RunSummary(written, out, diag.path)
