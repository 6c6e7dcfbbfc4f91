"""Discretized domains (masked grids, triangle meshes) and densities on them."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DomainError",
    "MeshParseError",
    "DomainSpec",
    "make_grid_domain",
    "load_mesh_off",
    "mesh_domain",
    "mesh_to_off",
    "normalize_density",
    "icosahedron",
]


class DomainError(ValueError):
    """Invalid domain construction or density input."""


class MeshParseError(DomainError):
    """Malformed OFF mesh file."""


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """A masked uniform grid or a triangle mesh.

    Grid nodes are numbered row-major over the active cells only, so every
    operator built on the domain acts on vectors of length ``n``.
    """

    kind: str
    n: int
    width: int = 0
    height: int = 0
    spacing: float = 1.0
    mask: np.ndarray | None = None
    vertices: np.ndarray | None = None
    triangles: np.ndarray | None = None
    index: np.ndarray | None = field(default=None, repr=False)
    cells: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_grid(self) -> bool:
        return self.kind == "grid"

    @property
    def full(self) -> bool:
        """True for a grid without masked cells."""
        return self.is_grid and self.n == self.width * self.height

    def to_image(self, values, fill=0.0):
        """Scatter a length-``n`` vector back onto the (height, width) grid."""
        if not self.is_grid:
            raise DomainError("to_image needs a grid domain")
        values = np.asarray(values)
        img = np.full((self.height, self.width), fill, dtype=values.dtype)
        img[self.cells[:, 0], self.cells[:, 1]] = values
        return img

    def from_image(self, img):
        """Gather the active cells of a (height, width) array."""
        img = np.asarray(img)
        if img.shape != (self.height, self.width):
            raise DomainError(f"image shape {img.shape} does not match grid {(self.height, self.width)}")
        return img[self.cells[:, 0], self.cells[:, 1]]

    def coordinates(self):
        """Node positions: (x, y) in length units for grids, 3-D for meshes."""
        if self.is_grid:
            return np.column_stack([self.cells[:, 1], self.cells[:, 0]]).astype(float) * self.spacing
        return self.vertices


def make_grid_domain(width, height, spacing=1.0, mask=None):
    """Build a grid domain; ``mask[y, x]`` is True for active cells."""
    width, height = int(width), int(height)
    if width < 1 or height < 1:
        raise DomainError("grid width and height must be >= 1")
    if not spacing > 0:
        raise DomainError("grid spacing must be > 0")
    if mask is None:
        mask = np.ones((height, width), dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (height, width):
            raise DomainError(f"mask shape {mask.shape} does not match (height, width) = {(height, width)}")
    if not mask.any():
        raise DomainError("empty domain")
    mask = mask.copy()
    mask.setflags(write=False)
    index = np.full(mask.shape, -1, dtype=np.int64)
    cells = np.argwhere(mask)
    index[cells[:, 0], cells[:, 1]] = np.arange(len(cells))
    index.setflags(write=False)
    cells.setflags(write=False)
    return DomainSpec(kind="grid", n=len(cells), width=width, height=height,
                      spacing=float(spacing), mask=mask, index=index, cells=cells)


def mesh_domain(vertices, triangles):
    """Validate vertex/triangle arrays and wrap them as a mesh domain."""
    vertices = np.array(vertices, dtype=float)
    triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    if vertices.ndim != 2 or vertices.shape[1] != 3 or len(vertices) == 0:
        raise DomainError("vertices must be a non-empty (n, 3) array")
    if len(triangles) == 0:
        raise DomainError("mesh has no triangles")
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise DomainError("triangle references a vertex out of range")
    used = np.zeros(len(vertices), dtype=bool)
    used[triangles.ravel()] = True
    if not used.all():
        raise DomainError(f"vertex {int(np.flatnonzero(~used)[0])} belongs to no triangle")
    vertices.setflags(write=False)
    triangles.setflags(write=False)
    return DomainSpec(kind="mesh", n=len(vertices), vertices=vertices, triangles=triangles)


def _off_lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def load_mesh_off(source):
    """Parse an ASCII OFF file (path, text, bytes or binary/text stream)."""
    if hasattr(source, "read"):
        data = source.read()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    elif isinstance(source, str) and "\n" not in source:
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source
    text = data.decode("ascii", errors="replace") if isinstance(data, (bytes, bytearray)) else data

    lines = _off_lines(text)
    try:
        lineno, tok = next(lines)
    except StopIteration:
        raise MeshParseError("empty OFF file") from None
    if tok[0] != "OFF":
        raise MeshParseError(f"malformed header at line {lineno}: expected 'OFF'")
    counts = tok[1:]
    if not counts:
        try:
            lineno, counts = next(lines)
        except StopIteration:
            raise MeshParseError("missing counts line") from None
    try:
        nv, nf = int(counts[0]), int(counts[1])
    except (ValueError, IndexError):
        raise MeshParseError(f"malformed counts at line {lineno}") from None
    if nv < 1 or nf < 1:
        raise MeshParseError(f"malformed counts at line {lineno}: need at least one vertex and face")

    verts = np.empty((nv, 3))
    for i in range(nv):
        try:
            lineno, tok = next(lines)
        except StopIteration:
            raise MeshParseError(f"file ends after {i} of {nv} vertices") from None
        try:
            verts[i] = [float(x) for x in tok[:3]]
        except ValueError:
            raise MeshParseError(f"malformed vertex at line {lineno}") from None
        if len(tok) < 3:
            raise MeshParseError(f"malformed vertex at line {lineno}")

    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        try:
            lineno, tok = next(lines)
        except StopIteration:
            raise MeshParseError(f"file ends after {i} of {nf} faces") from None
        try:
            k = int(tok[0])
            idx = [int(x) for x in tok[1:1 + k]]
        except (ValueError, IndexError):
            raise MeshParseError(f"malformed face at line {lineno}") from None
        if k != 3:
            raise MeshParseError(f"non-triangle face at line {lineno}")
        if len(idx) != 3:
            raise MeshParseError(f"malformed face at line {lineno}")
        if min(idx) < 0 or max(idx) >= nv:
            raise MeshParseError(f"vertex index out of range at line {lineno}")
        faces[i] = idx

    try:
        return mesh_domain(verts, faces)
    except DomainError as exc:
        raise MeshParseError(str(exc)) from None


def mesh_to_off(vertices, triangles):
    """Serialize a triangle mesh as OFF text."""
    buf = io.StringIO()
    buf.write(f"OFF\n{len(vertices)} {len(triangles)} 0\n")
    for v in np.asarray(vertices, dtype=float):
        buf.write(" ".join(repr(float(c)) for c in v) + "\n")
    for t in np.asarray(triangles, dtype=int):
        buf.write(f"3 {t[0]} {t[1]} {t[2]}\n")
    return buf.getvalue()


def icosahedron(radius=1.0):
    """Vertices and faces of a regular icosahedron."""
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=float)
    v *= radius / np.linalg.norm(v[0])
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return v, f


def normalize_density(raw):
    """Rescale a nonnegative vector to unit mass.

    Vectors whose mass is already 1 up to summation rounding are returned
    unchanged, which makes the operation idempotent bit for bit.
    """
    p = np.array(raw, dtype=np.float64).ravel()
    if p.size == 0:
        raise DomainError("empty density")
    if not np.all(np.isfinite(p)):
        raise DomainError("density has non-finite entries")
    if np.any(p < 0):
        raise DomainError("density has negative entries")
    mass = math.fsum(p)
    if mass <= 0:
        raise DomainError("density has zero mass")
    # fsum is exact, so one normalization leaves at most ~1 ulp of error
    if abs(mass - 1.0) <= 4 * np.finfo(float).eps:
        return p
    return p / mass
