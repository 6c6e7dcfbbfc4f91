"""JSON scenario configuration: parsing, defaults and validation.

Errors carry a JSON path (``$.flow.tau``) so a bad config can be fixed
without reading code. Referenced files are resolved against the directory
of the config file and must exist at parse time.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

__all__ = [
    "ConfigError",
    "ConfigFileError",
    "ConfigWarning",
    "SCENARIOS",
    "ScenarioConfig",
    "parse_config",
    "load_config",
]

SCENARIOS = (
    "congestion_crowd",
    "nonlinear_diffusion",
    "binary_crowd",
    "wasserstein_attraction",
    "pairwise_attraction",
    "sum_coupling",
)
TWO_DENSITY = ("pairwise_attraction", "sum_coupling")

FIELD_KINDS = ("constant", "bumps", "disk", "random", "linear", "quadratic", "raw", "pgm")

# above this eigenvalue ratio the finite-difference stencil loses accuracy
ANISOTROPY_WARN = 10.0


class ConfigError(ValueError):
    def __init__(self, path, msg):
        super().__init__(f"{path}: {msg}")
        self.json_path = path


class ConfigFileError(ConfigError):
    """A file named in the config does not exist."""

    def __init__(self, path, file):
        super().__init__(path, f"file not found: {file}")
        self.file = str(file)


class ConfigWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DomainBlock:
    type: str
    width: int = 0
    height: int = 0
    spacing: float = 1.0
    mask: Path | None = None
    mesh: Path | None = None


@dataclass(frozen=True)
class KernelBlock:
    type: str
    gamma: float
    L: int = 10
    tol: float = 1e-10
    solver: str = "direct"
    anisotropy: Any = None  # None, Path to CSV, or {"circular": ratio, "center": [x, y] | None}


@dataclass(frozen=True)
class FlowBlock:
    tau: float
    steps: int
    eps: float = 1e-8
    max_inner: int = 10000


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    domain: DomainBlock
    kernel: KernelBlock
    flow: FlowBlock
    functional: dict
    initial: tuple
    seed: int = 0
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def densities(self):
        return 2 if self.scenario in TWO_DENSITY else 1


class _Obj:
    """Typed accessors over one JSON object, tracking its path."""

    def __init__(self, data, path, base_dir):
        if not isinstance(data, dict):
            raise ConfigError(path, "expected an object")
        self.data = data
        self.path = path
        self.base = base_dir
        self.used = set()

    def _at(self, key):
        return f"{self.path}.{key}"

    def has(self, key):
        return key in self.data and self.data[key] is not None

    def raw(self, key, default=None):
        self.used.add(key)
        return self.data.get(key, default)

    def number(self, key, default=None, *, positive=False, nonneg=False, integer=False, required=False):
        self.used.add(key)
        if key not in self.data or self.data[key] is None:
            if required:
                raise ConfigError(self._at(key), "required")
            return default
        v = self.data[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(self._at(key), f"expected a number, got {type(v).__name__}")
        if not math.isfinite(v):
            raise ConfigError(self._at(key), "must be finite")
        if integer and int(v) != v:
            raise ConfigError(self._at(key), "expected an integer")
        if positive and not v > 0:
            raise ConfigError(self._at(key), "must be > 0")
        if nonneg and v < 0:
            raise ConfigError(self._at(key), "must be >= 0")
        return int(v) if integer else float(v)

    def string(self, key, default=None, choices=None, required=False):
        self.used.add(key)
        if key not in self.data or self.data[key] is None:
            if required:
                raise ConfigError(self._at(key), "required")
            return default
        v = self.data[key]
        if not isinstance(v, str):
            raise ConfigError(self._at(key), "expected a string")
        if choices is not None and v not in choices:
            raise ConfigError(self._at(key), f"must be one of {', '.join(choices)}")
        return v

    def boolean(self, key, default=False):
        self.used.add(key)
        v = self.data.get(key, default)
        if not isinstance(v, bool):
            raise ConfigError(self._at(key), "expected true or false")
        return v

    def file(self, key, value=None, path=None):
        value = self.raw(key) if value is None else value
        path = self._at(key) if path is None else path
        if not isinstance(value, str):
            raise ConfigError(path, "expected a file path")
        p = Path(value)
        if not p.is_absolute():
            p = self.base / p
        if not p.is_file():
            raise ConfigFileError(path, p)
        return p

    def sub(self, key, required=True):
        self.used.add(key)
        if key not in self.data:
            if required:
                raise ConfigError(self._at(key), "required")
            return None
        return _Obj(self.data[key], self._at(key), self.base)

    def check_unknown(self):
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(f"{self.path}.{extra[0]}", "unknown key")


def _field(value, path, base):
    """Validate a field/density generator; returns a normalized dict (files resolved)."""
    if isinstance(value, bool):
        raise ConfigError(path, "expected a number or a field object")
    if isinstance(value, (int, float)):
        if not math.isfinite(value):
            raise ConfigError(path, "must be finite")
        return {"constant": float(value)}
    if not isinstance(value, dict) or len(value) == 0:
        raise ConfigError(path, "expected a number or a field object")
    o = _Obj(value, path, base)
    kinds = [k for k in FIELD_KINDS if k in value]
    if len(kinds) != 1:
        raise ConfigError(path, f"field needs exactly one of {', '.join(FIELD_KINDS)}")
    kind = kinds[0]
    if kind == "constant":
        out = {"constant": o.number("constant", required=True)}
    elif kind == "bumps":
        bumps = o.raw("bumps")
        if not isinstance(bumps, list) or not bumps:
            raise ConfigError(f"{path}.bumps", "expected a non-empty list")
        out = {"bumps": []}
        for i, b in enumerate(bumps):
            bo = _Obj(b, f"{path}.bumps[{i}]", base)
            center = bo.raw("center")
            if not (isinstance(center, list) and len(center) in (2, 3)
                    and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in center)):
                raise ConfigError(f"{path}.bumps[{i}].center", "expected 2 or 3 coordinates")
            out["bumps"].append({"center": [float(c) for c in center],
                                 "sigma": bo.number("sigma", required=True, positive=True),
                                 "weight": bo.number("weight", 1.0, positive=True)})
            bo.check_unknown()
        out["floor"] = o.number("floor", 0.0, nonneg=True)
    elif kind == "random":
        ro = o.sub("random")
        lo, hi = ro.number("low", 0.0), ro.number("high", 1.0)
        if not hi > lo:
            raise ConfigError(f"{path}.random", "high must exceed low")
        ro.check_unknown()
        out = {"random": {"low": lo, "high": hi}}
    elif kind == "linear":
        g = o.raw("linear")
        if not (isinstance(g, list) and len(g) in (2, 3)
                and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in g)):
            raise ConfigError(f"{path}.linear", "expected a gradient with 2 or 3 components")
        out = {"linear": [float(c) for c in g], "offset": o.number("offset", 0.0)}
    elif kind == "quadratic":
        qo = o.sub("quadratic")
        center = qo.raw("center")
        if not (isinstance(center, list) and len(center) in (2, 3)):
            raise ConfigError(f"{path}.quadratic.center", "expected 2 or 3 coordinates")
        out = {"quadratic": {"center": [float(c) for c in center], "scale": qo.number("scale", 1.0)}}
        qo.check_unknown()
    elif kind == "disk":
        do = o.sub("disk")
        center = do.raw("center")
        if not (isinstance(center, list) and len(center) in (2, 3)):
            raise ConfigError(f"{path}.disk.center", "expected 2 or 3 coordinates")
        out = {"disk": {"center": [float(c) for c in center],
                        "radius": do.number("radius", required=True, positive=True)}}
        do.check_unknown()
    elif kind == "raw":
        out = {"raw": o.file("raw")}
    else:
        p = o.file("pgm")
        lo, hi = o.number("min", required=True), o.number("max", required=True)
        out = {"pgm": p, "min": lo, "max": hi}
    o.check_unknown()
    return out


def _kappa(fo: _Obj, required):
    if fo.has("kappa") and fo.has("kappa_ratio"):
        raise ConfigError(f"{fo.path}", "give kappa or kappa_ratio, not both")
    out = {}
    if fo.has("kappa"):
        out["kappa"] = fo.number("kappa", positive=True)
    elif fo.has("kappa_ratio"):
        # kappa = ratio * max of the initial density (of their sum for two densities)
        out["kappa_ratio"] = fo.number("kappa_ratio", positive=True)
    elif required:
        raise ConfigError(f"{fo.path}.kappa", "required (or kappa_ratio)")
    fo.used.update({"kappa", "kappa_ratio"})
    return out


def _potentials(fo: _Obj, base):
    ws = fo.raw("potentials")
    if ws is None:
        return [{"constant": 0.0}, {"constant": 0.0}]
    if not isinstance(ws, list) or len(ws) != 2:
        raise ConfigError(f"{fo.path}.potentials", "expected a list of two fields")
    return [_field(w, f"{fo.path}.potentials[{i}]", base) for i, w in enumerate(ws)]


def _functional(scenario, fo: _Obj, base):
    out = {}
    if scenario in ("congestion_crowd", "binary_crowd"):
        out.update(_kappa(fo, required=True))
        out["potential"] = _field(fo.raw("potential", 0.0), f"{fo.path}.potential", base)
    elif scenario == "nonlinear_diffusion":
        out["m"] = _field(fo.raw("m", 1.0), f"{fo.path}.m", base)
        out["b"] = _field(fo.raw("b", 1.0), f"{fo.path}.b", base)
        for key in ("m", "b"):
            c = out[key].get("constant")
            if c is not None and c < (1.0 if key == "m" else 0.0):
                raise ConfigError(f"{fo.path}.{key}", "m must be >= 1" if key == "m" else "b must be >= 0")
    elif scenario == "wasserstein_attraction":
        if not fo.has("target"):
            raise ConfigError(f"{fo.path}.target", "required")
        out["target"] = _field(fo.raw("target"), f"{fo.path}.target", base)
        out.update(_kappa(fo, required=False))
    elif scenario == "pairwise_attraction":
        out["alpha"] = fo.number("alpha", 1.0, positive=True)
        out["normalized_exponents"] = fo.boolean("normalized_exponents", False)
        out.update(_kappa(fo, required=False))
        out["potentials"] = _potentials(fo, base)
    elif scenario == "sum_coupling":
        out["coupling"] = fo.string("coupling", "entropy", ("entropy", "congestion"))
        out.update(_kappa(fo, required=out["coupling"] == "congestion"))
        out["potentials"] = _potentials(fo, base)
    fo.check_unknown()
    return out


def _anisotropy(ko: _Obj, value, domain: DomainBlock):
    path = f"{ko.path}.anisotropy"
    if value is None:
        return None
    if domain.type != "grid":
        raise ConfigError(path, "anisotropy fields apply to grid domains only")
    if isinstance(value, str):
        return ko.file("anisotropy", value, path)
    ao = _Obj(value, path, ko.base)
    ratio = ao.number("circular", required=True)
    if ratio < 1:
        raise ConfigError(f"{path}.circular", "anisotropy ratio must be >= 1")
    center = ao.raw("center")
    if center is not None and not (isinstance(center, list) and len(center) == 2):
        raise ConfigError(f"{path}.center", "expected [x, y]")
    ao.check_unknown()
    if ratio > ANISOTROPY_WARN:
        warnings.warn(f"{path}: anisotropy ratio {ratio:g} exceeds {ANISOTROPY_WARN:g}; "
                      "the finite-difference stencil is only accurate for moderate ratios",
                      ConfigWarning, stacklevel=3)
    return {"circular": ratio, "center": center}


def parse_config(source, base_dir=None):
    """Parse JSON text (or an already-decoded dict) into a validated :class:`ScenarioConfig`."""
    base = Path.cwd() if base_dir is None else Path(base_dir)
    if isinstance(source, (str, bytes)):
        try:
            data = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ConfigError("$", f"invalid JSON: {exc}") from None
    else:
        data = source
    root = _Obj(data, "$", base)
    scenario = root.string("scenario", required=True, choices=SCENARIOS)
    seed = root.number("seed", 0, integer=True, nonneg=True)

    do = root.sub("domain")
    dtype = do.string("type", "grid", ("grid", "mesh"))
    if dtype == "grid":
        domain = DomainBlock(
            "grid",
            width=do.number("width", required=True, integer=True, positive=True),
            height=do.number("height", required=True, integer=True, positive=True),
            spacing=do.number("spacing", 1.0, positive=True),
            mask=do.file("mask") if do.has("mask") else None,
        )
        do.used.add("mask")
    else:
        domain = DomainBlock("mesh", mesh=do.file("path"))
    do.check_unknown()

    ko = root.sub("kernel")
    if isinstance(ko.data.get("gamma"), list):
        raise ConfigError(f"{ko.path}.gamma", "one gamma is shared by all couplings; per-coupling values are not supported")
    ktype = ko.string("type", "heat", ("gaussian", "heat"))
    kernel = KernelBlock(
        ktype,
        gamma=ko.number("gamma", required=True, positive=True),
        L=ko.number("L", 10, integer=True, positive=True),
        tol=ko.number("tol", 1e-10, positive=True),
        solver=ko.string("solver", "direct", ("direct", "cg")),
        anisotropy=_anisotropy(ko, ko.raw("anisotropy"), domain),
    )
    if kernel.tol > 1e-6:
        raise ConfigError(f"{ko.path}.tol", "must lie in (0, 1e-6]")
    if ktype == "gaussian":
        if domain.type != "grid":
            raise ConfigError(f"{ko.path}.type", "gaussian kernel requires a grid domain")
        if domain.mask is not None:
            raise ConfigError(f"{ko.path}.type", "gaussian kernel requires a full grid but $.domain.mask is set; use the heat kernel")
        if kernel.anisotropy is not None:
            raise ConfigError(f"{ko.path}.anisotropy", "anisotropy needs the heat kernel")
    ko.check_unknown()

    fo = root.sub("flow")
    flow = FlowBlock(
        tau=fo.number("tau", required=True, positive=True),
        steps=fo.number("steps", required=True, integer=True, nonneg=True),
        eps=fo.number("eps", 1e-8, positive=True),
        max_inner=fo.number("max_inner", 10000, integer=True, positive=True),
    )
    fo.check_unknown()

    funo = root.sub("functional", required=False) or _Obj({}, "$.functional", base)
    functional = _functional(scenario, funo, base)

    want = 2 if scenario in TWO_DENSITY else 1
    init = root.raw("initial")
    if init is None:
        raise ConfigError("$.initial", "required")
    if not isinstance(init, list):
        init = [init]
    if len(init) != want:
        raise ConfigError("$.initial", f"{scenario} needs {want} initial densit{'ies' if want > 1 else 'y'}")
    initial = tuple(_field(v, f"$.initial[{i}]", base) for i, v in enumerate(init))
    for i, f in enumerate(initial):
        if f.get("constant", 1.0) <= 0:
            raise ConfigError(f"$.initial[{i}]", "initial density must have positive mass")
    root.check_unknown()
    return ScenarioConfig(scenario, domain, kernel, flow, functional, initial, seed, base)


def load_config(path):
    """Read and parse a config file; relative paths inside resolve against its directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigFileError("$", path)
    return parse_config(path.read_text(), base_dir=path.resolve().parent)
