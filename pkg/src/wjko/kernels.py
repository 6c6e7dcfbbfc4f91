"""Gibbs kernels as linear operators.

Two families are provided. On a full grid with squared Euclidean cost the
kernel is an exact separable Gaussian convolution. Everywhere else (masked
grids, triangle meshes, anisotropic metrics) it is replaced by ``L`` implicit
Euler steps of the heat equation, ``(Id - (gamma/L) * Lap)^(-L)``, where
``Lap`` is a sparse symmetric Laplacian with zero row sums.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import accel
from .domain import DomainError, DomainSpec

__all__ = [
    "KernelError",
    "AnisotropyWarning",
    "KernelOp",
    "DenseKernel",
    "GaussianGridKernel",
    "HeatKernel",
    "HeatKernelConfig",
    "AnisotropyField",
    "gaussian_grid_kernel",
    "grid_laplacian",
    "cotangent_laplacian",
    "anisotropic_laplacian",
    "heat_kernel",
    "check_laplacian",
]

# Off-diagonal weights are snapped to a dyadic grid this many bits below the
# largest weight so that every row sum cancels exactly in floating point.
_WEIGHT_BITS = 44


class KernelError(RuntimeError):
    """Kernel construction or application failure."""


class AnisotropyWarning(UserWarning):
    """Tensor field outside the range where the stencil stays monotone."""


class KernelOp:
    """Multiplication by a Gibbs kernel ``xi`` and by its transpose."""

    n: int
    gamma: float
    symmetric: bool

    def apply(self, v):
        raise NotImplementedError

    def apply_transpose(self, v):
        if self.symmetric:
            return self.apply(v)
        raise NotImplementedError

    def __call__(self, v):
        return self.apply(v)

    @property
    def T(self):
        return _Transposed(self)

    def dense(self):
        """Materialize the kernel column by column (small problems only)."""
        out = np.empty((self.n, self.n))
        e = np.zeros(self.n)
        for j in range(self.n):
            e[j] = 1.0
            out[:, j] = self.apply(e)
            e[j] = 0.0
        return out


class _Transposed(KernelOp):
    def __init__(self, base):
        self.base = base
        self.n = base.n
        self.gamma = base.gamma
        self.symmetric = base.symmetric

    def apply(self, v):
        return self.base.apply_transpose(v)

    def apply_transpose(self, v):
        return self.base.apply(v)

    @property
    def T(self):
        return self.base


class DenseKernel(KernelOp):
    """Explicit matrix kernel, used for small problems and oracles."""

    def __init__(self, matrix, gamma=1.0):
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise KernelError("kernel matrix must be square")
        self.matrix = matrix
        self.n = matrix.shape[0]
        self.gamma = float(gamma)
        self.symmetric = bool(np.array_equal(matrix, matrix.T))

    @classmethod
    def from_cost(cls, cost, gamma):
        return cls(np.exp(-np.asarray(cost, dtype=float) / gamma), gamma)

    def apply(self, v):
        return self.matrix @ np.asarray(v, dtype=float)

    def apply_transpose(self, v):
        return self.matrix.T @ np.asarray(v, dtype=float)

    def dense(self):
        return self.matrix.copy()


class GaussianGridKernel(KernelOp):
    """``exp(-|x_i - x_j|^2 / gamma)`` on a full grid via two dense 1-D passes."""

    def __init__(self, width, height, spacing, gamma):
        self.width, self.height = width, height
        self.n = width * height
        self.gamma = float(gamma)
        self.symmetric = True
        self.kx = self._axis(width, spacing, gamma)
        self.ky = self._axis(height, spacing, gamma)

    @staticmethod
    def _axis(n, h, gamma):
        d = (np.arange(n)[:, None] - np.arange(n)[None, :]) * h
        return np.exp(-(d * d) / gamma)

    def apply(self, v):
        img = np.asarray(v, dtype=float).reshape(self.height, self.width)
        return (self.ky @ img @ self.kx).ravel()


def gaussian_grid_kernel(domain: DomainSpec, gamma):
    """Exact Gaussian kernel on a full (unmasked) grid domain."""
    if not domain.is_grid:
        raise KernelError("Gaussian kernel requires a grid domain")
    if not domain.full:
        raise KernelError("Gaussian kernel requires full grid; use heat kernel")
    if not gamma > 0:
        raise KernelError("gamma must be > 0")
    return GaussianGridKernel(domain.width, domain.height, domain.spacing, gamma)


def _snap(w):
    w = np.asarray(w, dtype=float)
    big = np.max(np.abs(w)) if w.size else 0.0
    if big == 0:
        return w
    scale = 2.0 ** (math.frexp(big)[1] - _WEIGHT_BITS)
    return np.round(w / scale) * scale


def _assemble(n, i, j, w):
    """Symmetric zero-row-sum matrix from one-sided edge lists (i, j, w)."""
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    w = _snap(w)
    keep = w != 0
    i, j, w = i[keep], j[keep], w[keep]
    off = sp.coo_matrix((np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                        shape=(n, n)).tocsr()
    off.sum_duplicates()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    lap = (off + sp.diags(diag)).tocsr()
    lap.sort_indices()
    return lap


def check_laplacian(lap, tol=0.0):
    """Validate symmetry and zero row sums of a sparse Laplacian."""
    lap = sp.csr_matrix(lap)
    if lap.shape[0] != lap.shape[1]:
        raise KernelError("Laplacian must be square")
    if (abs(lap - lap.T) > tol).nnz:
        raise KernelError("Laplacian is not symmetric")
    rows = np.abs(lap @ np.ones(lap.shape[0]))
    if rows.size and rows.max() > tol:
        raise KernelError(f"Laplacian row sums do not vanish (max {rows.max():.3e})")
    return lap


def grid_laplacian(domain: DomainSpec):
    """5-point Laplacian on the active cells, Neumann on the mask boundary."""
    if not domain.is_grid:
        raise KernelError("grid_laplacian needs a grid domain")
    inv_h2 = 1.0 / domain.spacing ** 2
    ii, jj = [], []
    for dy, dx in ((0, 1), (1, 0)):
        i, j = accel.grid_edges(domain.index, dy, dx, False)
        ii.append(i)
        jj.append(j)
    i, j = np.concatenate(ii), np.concatenate(jj)
    return _assemble(domain.n, i, j, np.full(i.size, inv_h2))


def cotangent_laplacian(domain: DomainSpec):
    """Cotangent-weight Laplacian of a triangle mesh (no mass matrix).

    Weights on edges opposite obtuse angles can be negative; they are kept.
    """
    if domain.kind != "mesh":
        raise KernelError("cotangent_laplacian needs a mesh domain")
    x = domain.vertices
    t = domain.triangles
    ii, jj, ww = [], [], []
    for c in range(3):
        o, a, b = t[:, c], t[:, (c + 1) % 3], t[:, (c + 2) % 3]
        e1 = x[a] - x[o]
        e2 = x[b] - x[o]
        cross = np.linalg.norm(np.cross(e1, e2), axis=1)
        if c == 0:
            scale = np.maximum(np.einsum("ij,ij->i", e1, e1), np.einsum("ij,ij->i", e2, e2))
            bad = ~(cross > 1e-14 * scale)
            if bad.any():
                k = int(np.flatnonzero(bad)[0])
                raise KernelError(f"degenerate triangle {k} {tuple(int(v) for v in t[k])} has zero area")
        ii.append(a)
        jj.append(b)
        ww.append(0.5 * np.einsum("ij,ij->i", e1, e2) / cross)
    return _assemble(domain.n, np.concatenate(ii), np.concatenate(jj), np.concatenate(ww))


@dataclass(frozen=True, eq=False)
class AnisotropyField:
    """Per-cell symmetric positive-definite 2x2 tensors (txx, txy, tyy)."""

    txx: np.ndarray
    txy: np.ndarray
    tyy: np.ndarray

    def __post_init__(self):
        for name in ("txx", "txy", "tyy"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.txx.shape == self.txy.shape == self.tyy.shape):
            raise KernelError("tensor component arrays differ in shape")
        det = self.txx * self.tyy - self.txy ** 2
        bad = ~((self.txx > 0) & (self.tyy > 0) & (det > 0))
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise KernelError(f"tensor at cell {k} is not symmetric positive definite")

    @classmethod
    def constant(cls, n, txx, txy, tyy):
        return cls(np.full(n, txx, float), np.full(n, txy, float), np.full(n, tyy, float))

    @classmethod
    def circular(cls, domain: DomainSpec, ratio, center=None):
        """Tensors whose major axis follows circles around ``center``."""
        xy = domain.coordinates()
        if center is None:
            center = ((domain.width - 1) * domain.spacing / 2, (domain.height - 1) * domain.spacing / 2)
        d = xy - np.asarray(center, dtype=float)
        theta = np.arctan2(d[:, 1], d[:, 0]) + np.pi / 2
        c, s = np.cos(theta), np.sin(theta)
        major, minor = float(ratio), 1.0
        return cls(major * c * c + minor * s * s, (major - minor) * c * s, major * s * s + minor * c * c)

    @classmethod
    def from_csv(cls, path, domain: DomainSpec):
        """Read ``cell_x, cell_y, txx, txy, tyy`` rows; every active cell is required."""
        comp = np.full((domain.n, 3), np.nan)
        with open(path, newline="") as fh:
            rows = csv.reader(fh)
            for lineno, row in enumerate(rows, start=1):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    x, y = int(row[0]), int(row[1])
                    vals = [float(v) for v in row[2:5]]
                except (ValueError, IndexError):
                    if lineno == 1:
                        continue  # header
                    raise KernelError(f"{path}: malformed row at line {lineno}") from None
                if len(vals) != 3:
                    raise KernelError(f"{path}: malformed row at line {lineno}")
                if not (0 <= x < domain.width and 0 <= y < domain.height):
                    raise KernelError(f"{path}: cell ({x}, {y}) outside grid at line {lineno}")
                k = domain.index[y, x]
                if k >= 0:
                    comp[k] = vals
        missing = np.flatnonzero(np.isnan(comp[:, 0]))
        if missing.size:
            y, x = domain.cells[missing[0]]
            raise KernelError(f"{path}: no tensor for active cell ({x}, {y})")
        return cls(comp[:, 0], comp[:, 1], comp[:, 2])

    def ratio(self):
        """Largest eigenvalue ratio over all cells."""
        tr = 0.5 * (self.txx + self.tyy)
        disc = np.sqrt(0.25 * (self.txx - self.tyy) ** 2 + self.txy ** 2)
        return float(np.max((tr + disc) / (tr - disc)))


def anisotropic_laplacian(domain: DomainSpec, tensors: AnisotropyField):
    """Finite-difference assembly of ``div(T grad u)`` on a (masked) grid.

    ``T`` is split per cell along the stencil directions (1,0), (0,1), (1,1)
    and (1,-1): ``T = w1 e1e1' + w2 e2e2' + w3 e3e3' + w4 e4e4'`` with the
    cross term carried by the diagonal whose sign matches ``txy``. Each link
    uses the arithmetic mean of its two end-cell weights, which keeps the
    matrix symmetric with zero row sums. Link weights stay nonnegative while
    ``|txy| <= min(txx, tyy)``; past that (roughly anisotropy ratios above
    10 for unlucky orientations) some become negative and the kernel
    positivity check in :func:`heat_kernel` becomes the safeguard.
    """
    if not domain.is_grid:
        raise KernelError("anisotropic_laplacian needs a grid domain")
    if tensors.txx.shape != (domain.n,):
        raise KernelError(f"tensor field has {tensors.txx.size} cells, domain has {domain.n}")
    axy = np.abs(tensors.txy)
    per_dir = {
        (0, 1): tensors.txx - axy,
        (1, 0): tensors.tyy - axy,
        (1, 1): np.maximum(tensors.txy, 0.0),
        (1, -1): np.maximum(-tensors.txy, 0.0),
    }
    if min(per_dir[(0, 1)].min(), per_dir[(1, 0)].min()) < 0:
        warnings.warn("tensor field is not diagonally dominant; some stencil weights are negative",
                      AnisotropyWarning, stacklevel=2)
    inv_h2 = 1.0 / domain.spacing ** 2
    ii, jj, ww = [], [], []
    for (dy, dx), wcell in per_dir.items():
        if not np.any(wcell):
            continue
        i, j = accel.grid_edges(domain.index, dy, dx, True)
        ii.append(i)
        jj.append(j)
        ww.append(0.5 * (wcell[i] + wcell[j]) * inv_h2)
    if not ii:
        return _assemble(domain.n, [], [], [])
    return _assemble(domain.n, np.concatenate(ii), np.concatenate(jj), np.concatenate(ww))


@dataclass(frozen=True)
class HeatKernelConfig:
    """Parameters of the implicit-Euler heat kernel approximation."""

    gamma: float
    L: int = 10
    tol: float = 1e-10
    solver: str = "direct"

    def __post_init__(self):
        if not self.gamma > 0:
            raise KernelError("gamma must be > 0")
        if int(self.L) != self.L or self.L < 1:
            raise KernelError("L must be a positive integer")
        if not 0 < self.tol <= 1e-6:
            raise KernelError("solver tolerance must lie in (0, 1e-6]")
        if self.solver not in ("direct", "cg"):
            raise KernelError(f"unknown solver {self.solver!r}")


class HeatKernel(KernelOp):
    """``(Id - (gamma/L) Lap)^(-L)`` applied by ``L`` prefactorized solves."""

    def __init__(self, laplacian, config: HeatKernelConfig):
        lap = sp.csr_matrix(laplacian, dtype=float)
        self.n = lap.shape[0]
        self.gamma = float(config.gamma)
        self.symmetric = True
        self.config = config
        off = lap - sp.diags(lap.diagonal())
        self.monotone = not (off.data < 0).any()
        self.system = (sp.identity(self.n, format="csr") - (config.gamma / config.L) * lap).tocsc()
        self._lu = spla.splu(self.system) if config.solver == "direct" else None

    def _solve(self, rhs):
        if self._lu is not None:
            return self._lu.solve(rhs)
        x, info = spla.cg(self.system, rhs, rtol=self.config.tol, atol=0.0, maxiter=10 * self.n)
        nb = np.linalg.norm(rhs)
        res = np.linalg.norm(self.system @ x - rhs) / nb if nb > 0 else 0.0
        if info != 0 or res > self.config.tol:
            raise KernelError(f"conjugate gradient did not reach tolerance (relative residual {res:.3e})")
        return x

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        x = v
        for _ in range(self.config.L):
            x = self._solve(x)
        if not self.monotone and v.min() >= 0 and v.max() > 0 and x.min() <= 0:
            raise KernelError("heat kernel lost positivity (negative cotangent/stencil weights); reduce gamma/L")
        return x


def heat_kernel(laplacian, config: HeatKernelConfig):
    """Heat-kernel approximation of the Gibbs kernel for a given Laplacian."""
    if isinstance(config, (int, float)):
        config = HeatKernelConfig(gamma=float(config))
    try:
        return HeatKernel(laplacian, config)
    except RuntimeError as exc:
        if isinstance(exc, KernelError):
            raise
        raise KernelError(f"factorization failed: {exc}") from exc


def laplacian_for(domain: DomainSpec, tensors: AnisotropyField | None = None):
    """Pick the Laplacian matching the domain kind."""
    if domain.kind == "mesh":
        if tensors is not None:
            raise DomainError("anisotropy fields apply to grid domains only")
        return cotangent_laplacian(domain)
    if tensors is not None:
        return anisotropic_laplacian(domain, tensors)
    return grid_laplacian(domain)
