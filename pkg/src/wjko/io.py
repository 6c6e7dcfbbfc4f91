"""Frame files, PGM/PPM previews, raw fields and run bookkeeping."""
from __future__ import annotations

import csv
import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .domain import DomainSpec

__all__ = [
    "FrameError",
    "FrameMeta",
    "write_frame",
    "read_frame",
    "frame_meta_for",
    "read_pgm",
    "write_pgm",
    "write_ppm",
    "frame_to_pgm",
    "frames_to_ppm",
    "load_pgm_mask",
    "load_pgm_field",
    "load_raw_field",
    "DiagnosticsWriter",
    "Manifest",
]

MAGIC = b"WJKO"
VERSION = 1
_HEADER = struct.Struct("<4sHBIII")
_KINDS = {"grid": 0, "mesh": 1}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}


class FrameError(ValueError):
    """Unreadable or inconsistent frame / image file."""


@dataclass(frozen=True)
class FrameMeta:
    kind: str
    width: int
    height: int
    n: int


def frame_meta_for(domain: DomainSpec):
    if domain.is_grid:
        return FrameMeta("grid", domain.width, domain.height, domain.n)
    return FrameMeta("mesh", domain.n, 0, domain.n)


def write_frame(density, meta: FrameMeta, sink):
    """Write a frame to a path or binary stream: header then float64 LE payload."""
    p = np.ascontiguousarray(density, dtype="<f8").ravel()
    if p.size != meta.n:
        raise FrameError(f"density has {p.size} entries, header says {meta.n}")
    if not np.all(np.isfinite(p)):
        raise FrameError("frame values must be finite")
    blob = _HEADER.pack(MAGIC, VERSION, _KINDS[meta.kind], meta.width, meta.height, meta.n) + p.tobytes()
    if hasattr(sink, "write"):
        sink.write(blob)
    else:
        # write-then-rename so a crash never leaves a half frame under the final name
        tmp = f"{sink}.part"
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, sink)


def read_frame(source):
    """Read a frame from a path, bytes or binary stream; returns ``(density, FrameMeta)``."""
    if hasattr(source, "read"):
        blob = source.read()
    elif isinstance(source, (bytes, bytearray)):
        blob = bytes(source)
    else:
        with open(source, "rb") as fh:
            blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FrameError("truncated frame header")
    magic, version, kind, width, height, n = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FrameError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FrameError(f"unsupported frame version {version}")
    if kind not in _KIND_NAMES:
        raise FrameError(f"unknown domain kind {kind}")
    payload = blob[_HEADER.size:]
    if len(payload) != 8 * n:
        raise FrameError(f"payload has {len(payload)} bytes, expected {8 * n}")
    p = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(p)):
        raise FrameError("frame contains non-finite values")
    return p, FrameMeta(_KIND_NAMES[kind], width, height, n)


# --------------------------------------------------------------------------
# netpbm

_PNM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def read_pgm(path):
    """Read a binary PGM (P5), 8 or 16 bit; returns ``(image uint array, maxval)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    fields = []
    for _ in range(4):
        m = _PNM_TOKEN.match(data, pos)
        if not m:
            raise FrameError(f"{path}: truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise FrameError(f"{path}: not a binary PGM (P5) file")
    try:
        width, height, maxval = (int(x) for x in fields[1:])
    except ValueError:
        raise FrameError(f"{path}: malformed PGM header") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FrameError(f"{path}: malformed PGM header")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    need = width * height * dtype.itemsize
    if len(data) - pos < need:
        raise FrameError(f"{path}: truncated PGM pixel data")
    img = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos).reshape(height, width)
    return img.astype(np.int64), maxval


def write_pgm(path, img):
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_ppm(path, rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def _to_grid(p, meta: FrameMeta, mask=None):
    if meta.kind != "grid":
        raise FrameError("previews need a grid frame")
    if meta.n == meta.width * meta.height:
        return p.reshape(meta.height, meta.width)
    if mask is None:
        raise FrameError("frame is on a masked grid; pass the mask to render it")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (meta.height, meta.width) or mask.sum() != meta.n:
        raise FrameError("mask does not match the frame layout")
    img = np.zeros((meta.height, meta.width))
    img[mask] = p
    return img


def _quantize(img, scale):
    if scale <= 0:
        return np.zeros(img.shape, dtype=np.uint8)
    return np.clip(np.floor(255.0 * img / scale), 0, 255).astype(np.uint8)


def frame_to_pgm(p, meta: FrameMeta, path, mask=None):
    """8-bit preview with ``pixel = floor(255 p / max p)``; masked cells are black."""
    img = _to_grid(np.asarray(p, dtype=float), meta, mask)
    write_pgm(path, _quantize(img, float(img.max())))


def frames_to_ppm(p1, p2, meta: FrameMeta, path, mask=None):
    """Two-density preview: red = first, green = second, scaled by their joint maximum."""
    i1 = _to_grid(np.asarray(p1, dtype=float), meta, mask)
    i2 = _to_grid(np.asarray(p2, dtype=float), meta, mask)
    scale = float(max(i1.max(), i2.max()))
    rgb = np.zeros(i1.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = _quantize(i1, scale)
    rgb[..., 1] = _quantize(i2, scale)
    write_ppm(path, rgb)


def load_pgm_mask(path, width=None, height=None):
    """Boolean mask from a PGM: nonzero pixels are active."""
    img, _ = read_pgm(path)
    if width is not None and img.shape != (height, width):
        raise FrameError(f"{path}: mask is {img.shape[1]}x{img.shape[0]}, grid is {width}x{height}")
    return img > 0


def load_pgm_field(path, lo, hi, domain: DomainSpec):
    """Field on the active cells from a PGM, mapping 0..maxval linearly onto [lo, hi]."""
    img, maxval = read_pgm(path)
    if img.shape != (domain.height, domain.width):
        raise FrameError(f"{path}: image is {img.shape[1]}x{img.shape[0]}, grid is {domain.width}x{domain.height}")
    return lo + (hi - lo) * domain.from_image(img).astype(float) / maxval


def load_raw_field(path, domain: DomainSpec):
    """float64 little-endian values, either one per active node or one per grid cell."""
    vals = np.fromfile(path, dtype="<f8").astype(np.float64)
    if vals.size == domain.n:
        return vals
    if domain.is_grid and vals.size == domain.width * domain.height:
        return domain.from_image(vals.reshape(domain.height, domain.width))
    raise FrameError(f"{path}: {vals.size} values, domain has {domain.n} nodes")


# --------------------------------------------------------------------------
# run bookkeeping

class DiagnosticsWriter:
    """CSV rows ``step, inner_iterations, final_violation, mass, max_density[, extra...]``."""

    BASE = ["step", "inner_iterations", "final_violation", "mass", "max_density"]

    def __init__(self, path, extra_columns=()):
        self.path = Path(path)
        self.columns = self.BASE + list(extra_columns)
        with open(self.path, "w", newline="") as fh:
            csv.writer(fh).writerow(self.columns)

    def row(self, *values):
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([repr(float(v)) if isinstance(v, float) else v for v in values])


class Manifest:
    """Plain-text list of completed frame files, rewritten after every frame."""

    def __init__(self, out_dir):
        self.path = Path(out_dir) / "MANIFEST"
        self.entries = []
        self._flush("running")

    def add(self, name):
        self.entries.append(name)
        self._flush("running")

    def close(self, status):
        self._flush(status)

    def _flush(self, status):
        tmp = self.path.with_suffix(".part")
        tmp.write_text(f"# status: {status}\n" + "".join(f"{e}\n" for e in self.entries))
        os.replace(tmp, self.path)
