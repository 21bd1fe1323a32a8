"""Readers and writers for every on-disk artifact.

Binary density maps (DMAP) and orientation fields (OFLD), text fiber and
root lists (FIB), camera JSON, a minimal OBJ subset and the metrics
report. Byte layouts are documented in ``docs/formats.md``.

``parse_*`` functions take bytes/str and raise a ``FormatError`` subclass
on any malformed input; ``read_*`` wrap them with file access.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from pathlib import Path

import jsonschema
import numpy as np

from .core import Camera, Fiber, FiberSet, RootSet, TriMesh
from .errors import (CountMismatch, IndexOutOfRange, MagicMismatch, NonFinite, SchemaError, TruncatedPayload,
                     UnsupportedDirective)
from .fields import VoxelGridField
from .rootfinder import DensityMap

log = logging.getLogger(__name__)

DMAP_MAGIC = b"DMAP"
OFLD_MAGIC = b"OFLD"
FORMAT_VERSION = 1
_DMAP_HEADER = struct.Struct("<4sHII")
_OFLD_HEADER = struct.Struct("<4sHIII6f")


# DMAP

def dump_dmap(dmap: DensityMap) -> bytes:
    h, w = dmap.values.shape
    return _DMAP_HEADER.pack(DMAP_MAGIC, FORMAT_VERSION, w, h) + dmap.values.astype("<f4").tobytes()


def parse_dmap(data: bytes) -> DensityMap:
    if len(data) < _DMAP_HEADER.size:
        raise TruncatedPayload(f"header needs {_DMAP_HEADER.size} bytes, got {len(data)}", "byte 0")
    magic, version, w, h = _DMAP_HEADER.unpack_from(data)
    if magic != DMAP_MAGIC:
        raise MagicMismatch(f"expected {DMAP_MAGIC!r}, got {magic!r}", "byte 0")
    if version != FORMAT_VERSION:
        raise SchemaError(f"unsupported version {version}", "byte 4")
    if w == 0 or h == 0:
        raise SchemaError("width and height must be positive", "byte 6")
    need = 4 * w * h
    payload = len(data) - _DMAP_HEADER.size
    if payload < need:
        raise TruncatedPayload(f"payload needs {need} bytes, got {payload}", f"byte {_DMAP_HEADER.size}")
    if payload > need:
        raise CountMismatch(f"{payload - need} trailing bytes after payload", f"byte {_DMAP_HEADER.size + need}")
    vals = np.frombuffer(data, dtype="<f4", offset=_DMAP_HEADER.size).reshape(h, w)
    bad = ~np.isfinite(vals)
    if bad.any():
        i = int(np.flatnonzero(bad.ravel())[0])
        raise NonFinite("non-finite density value", f"byte {_DMAP_HEADER.size + 4 * i}")
    if (vals < 0).any():
        i = int(np.flatnonzero((vals < 0).ravel())[0])
        raise SchemaError("negative density value", f"byte {_DMAP_HEADER.size + 4 * i}")
    return DensityMap(vals.astype(np.float32))


def write_dmap(path, dmap: DensityMap):
    Path(path).write_bytes(dump_dmap(dmap))


def read_dmap(path) -> DensityMap:
    return parse_dmap(Path(path).read_bytes())


# OFLD

def dump_ofld(field: VoxelGridField) -> bytes:
    nx, ny, nz = (int(x) for x in field.dims)
    head = _OFLD_HEADER.pack(OFLD_MAGIC, FORMAT_VERSION, nx, ny, nz, *field.lo.tolist(), *field.hi.tolist())
    # x-fastest: flatten (nz, ny, nx, 3)
    body = np.ascontiguousarray(np.transpose(field.vectors, (2, 1, 0, 3))).astype("<f4").tobytes()
    return head + body


def parse_ofld(data: bytes) -> VoxelGridField:
    hs = _OFLD_HEADER.size
    if len(data) < hs:
        raise TruncatedPayload(f"header needs {hs} bytes, got {len(data)}", "byte 0")
    magic, version, nx, ny, nz, *box = _OFLD_HEADER.unpack_from(data)
    if magic != OFLD_MAGIC:
        raise MagicMismatch(f"expected {OFLD_MAGIC!r}, got {magic!r}", "byte 0")
    if version != FORMAT_VERSION:
        raise SchemaError(f"unsupported version {version}", "byte 4")
    if min(nx, ny, nz) < 2:
        raise SchemaError("every grid dimension must be >= 2", "byte 6")
    if not all(math.isfinite(b) for b in box):
        raise NonFinite("non-finite bounding box", "byte 18")
    lo, hi = np.array(box[:3]), np.array(box[3:])
    if not np.all(hi > lo):
        raise SchemaError("bounding box max must exceed min on every axis", "byte 18")
    need = 12 * nx * ny * nz
    payload = len(data) - hs
    if payload < need:
        raise TruncatedPayload(f"payload needs {need} bytes, got {payload}", f"byte {hs}")
    if payload > need:
        raise CountMismatch(f"{payload - need} trailing bytes after payload", f"byte {hs + need}")
    vec = np.frombuffer(data, dtype="<f4", offset=hs).reshape(nz, ny, nx, 3)
    if not np.all(np.isfinite(vec)):
        i = int(np.flatnonzero(~np.isfinite(vec.ravel()))[0])
        raise NonFinite("non-finite vector component", f"byte {hs + 4 * i}")
    return VoxelGridField(np.transpose(vec, (2, 1, 0, 3)).astype(np.float32), lo, hi)


def write_ofld(path, field: VoxelGridField):
    Path(path).write_bytes(dump_ofld(field))


def read_ofld(path) -> VoxelGridField:
    return parse_ofld(Path(path).read_bytes())


# FIB

def _fmt(x: float) -> str:
    return f"{x:.9g}"


def dump_fib(fibers) -> str:
    """Fibers (a FiberSet, list of Fibers or of (m, 3) arrays) as FIB text."""
    if isinstance(fibers, FiberSet):
        fibers = fibers.fibers
    lines = [str(len(fibers))]
    for f in fibers:
        pts = f.points if isinstance(f, Fiber) else np.asarray(f).reshape(-1, 3)
        lines.append(str(len(pts)))
        lines.extend(" ".join(_fmt(c) for c in p) for p in pts.tolist())
    return "\n".join(lines) + "\n"


def dump_roots(roots) -> str:
    pts = roots.points if isinstance(roots, RootSet) else np.asarray(roots).reshape(-1, 3)
    return dump_fib([p[None, :] for p in pts])


def _int_line(lines, k, what):
    if k >= len(lines):
        raise CountMismatch(f"missing {what}", f"line {k + 1}")
    tok = lines[k].strip()
    try:
        v = int(tok)
    except ValueError:
        raise SchemaError(f"expected an integer {what}, got {tok[:40]!r}", f"line {k + 1}") from None
    if v < 0:
        raise SchemaError(f"negative {what}", f"line {k + 1}")
    return v


def parse_fib(text) -> list:
    """List of ``(m, 3)`` point arrays."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaError(f"not UTF-8 text ({exc.reason})", f"byte {exc.start}") from None
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    n = _int_line(lines, 0, "fiber count")
    k = 1
    out = []
    for i in range(n):
        if k >= len(lines):
            raise CountMismatch(f"declared {n} fibers but found {i}", f"line {k + 1}")
        m = _int_line(lines, k, f"point count of fiber {i}")
        if m == 0:
            raise SchemaError(f"fiber {i} has no points", f"line {k + 1}")
        k += 1
        if k + m > len(lines):
            raise CountMismatch(f"fiber {i} declares {m} points but only {len(lines) - k} lines remain",
                                f"line {len(lines) + 1}")
        pts = np.empty((m, 3))
        for j in range(m):
            toks = lines[k].split()
            if len(toks) != 3:
                raise SchemaError(f"expected 'x y z', got {lines[k][:60]!r}", f"line {k + 1}")
            try:
                pts[j] = [float(t) for t in toks]
            except ValueError:
                raise SchemaError(f"bad number in {lines[k][:60]!r}", f"line {k + 1}") from None
            if not np.all(np.isfinite(pts[j])):
                raise NonFinite("non-finite coordinate", f"line {k + 1}")
            k += 1
        out.append(pts)
    if k != len(lines):
        raise CountMismatch(f"declared {n} fibers but content continues", f"line {k + 1}")
    return out


def parse_fiberset(text, step=None) -> FiberSet:
    fibers = []
    for i, pts in enumerate(parse_fib(text)):
        try:
            fibers.append(Fiber(pts))
        except ValueError as exc:
            raise SchemaError(f"fiber {i}: {exc}") from None
    kw = {} if step is None else {"step": step}
    return FiberSet(fibers, **kw)


def parse_roots(text) -> RootSet:
    """Roots are one-point fibers; longer fibers contribute their first point."""
    return RootSet(np.array([p[0] for p in parse_fib(text)]).reshape(-1, 3))


def write_fib(path, fibers):
    Path(path).write_text(dump_fib(fibers))


def read_fib(path, step=None) -> FiberSet:
    return parse_fiberset(Path(path).read_bytes(), step)


def write_roots(path, roots):
    Path(path).write_text(dump_roots(roots))


def read_roots(path) -> RootSet:
    return parse_roots(Path(path).read_bytes())


# camera JSON

_NUM = {"type": "number"}
CAMERA_SCHEMA = {
    "type": "object",
    "required": ["mode", "extrinsics", "intrinsics", "width", "height"],
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": ["perspective", "orthographic"]},
        "extrinsics": {"type": "array", "minItems": 3, "maxItems": 3,
                       "items": {"type": "array", "minItems": 4, "maxItems": 4, "items": _NUM}},
        "intrinsics": {"type": "object", "required": ["fx", "fy", "cx", "cy"], "additionalProperties": False,
                       "properties": {"fx": {"type": "number", "exclusiveMinimum": 0},
                                      "fy": {"type": "number", "exclusiveMinimum": 0},
                                      "cx": _NUM, "cy": _NUM}},
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
    },
}


def camera_to_dict(cam: Camera) -> dict:
    ext = np.hstack([cam.rotation, cam.translation[:, None]])
    return {"mode": cam.mode, "extrinsics": ext.tolist(),
            "intrinsics": {"fx": float(cam.fx), "fy": float(cam.fy), "cx": float(cam.cx), "cy": float(cam.cy)},
            "width": int(cam.width), "height": int(cam.height)}


def dump_camera(cam: Camera) -> str:
    return json.dumps(camera_to_dict(cam), indent=2, sort_keys=True) + "\n"


def parse_camera(text) -> Camera:
    try:
        obj = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        pos = getattr(exc, "pos", getattr(exc, "start", None))
        raise SchemaError(f"invalid JSON: {exc}", None if pos is None else f"char {pos}") from None
    except RecursionError:
        raise SchemaError("JSON nesting too deep") from None
    try:
        jsonschema.validate(obj, CAMERA_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(exc.message[:200], path) from None
    ext = np.array(obj["extrinsics"], dtype=np.float64)
    intr = obj["intrinsics"]
    vals = np.concatenate([ext.ravel(), [intr["fx"], intr["fy"], intr["cx"], intr["cy"]]])
    if not np.all(np.isfinite(vals)):
        raise NonFinite("non-finite camera parameter")
    rot = ext[:, :3]
    if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6) or np.linalg.det(rot) < 0:
        raise SchemaError("extrinsic rotation is not a proper rotation", "extrinsics")
    try:
        return Camera(rot, ext[:, 3], float(intr["fx"]), float(intr["fy"]), float(intr["cx"]), float(intr["cy"]),
                      int(obj["width"]), int(obj["height"]), obj["mode"])
    except (ValueError, OverflowError) as exc:
        raise SchemaError(str(exc)) from None


def write_camera(path, cam: Camera):
    Path(path).write_text(dump_camera(cam))


def read_camera(path) -> Camera:
    return parse_camera(Path(path).read_bytes())


# OBJ subset

def parse_obj(text, mask_text=None) -> TriMesh:
    """``v`` and ``f`` records; ``vn``/``vt``/comments are skipped, anything else is rejected.

    Polygons are fan-triangulated from their first vertex. Degenerate
    triangles are dropped with a logged count.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaError(f"not UTF-8 text ({exc.reason})", f"byte {exc.start}") from None
    verts, tris = [], []
    for ln, line in enumerate(text.splitlines(), 1):
        toks = line.split()
        if not toks or toks[0].startswith("#"):
            continue
        kind = toks[0]
        if kind in ("vn", "vt"):
            continue
        if kind == "v":
            if len(toks) < 4:
                raise SchemaError("vertex needs 3 coordinates", f"line {ln}")
            try:
                xyz = [float(t) for t in toks[1:4]]
            except ValueError:
                raise SchemaError(f"bad vertex {line[:60]!r}", f"line {ln}") from None
            if not all(math.isfinite(c) for c in xyz):
                raise NonFinite("non-finite vertex", f"line {ln}")
            verts.append(xyz)
        elif kind == "f":
            if len(toks) < 4:
                raise SchemaError("face needs at least 3 vertices", f"line {ln}")
            idx = []
            for t in toks[1:]:
                try:
                    i = int(t.split("/")[0])
                except ValueError:
                    raise SchemaError(f"bad face index {t[:20]!r}", f"line {ln}") from None
                if i > 0 and i <= len(verts):
                    idx.append(i - 1)
                elif i < 0 and -i <= len(verts):
                    idx.append(len(verts) + i)
                else:
                    raise IndexOutOfRange(f"face index {i} with {len(verts)} vertices", f"line {ln}")
            for k in range(1, len(idx) - 1):
                tris.append((idx[0], idx[k], idx[k + 1]))
        else:
            raise UnsupportedDirective(f"unsupported directive {kind[:20]!r}", f"line {ln}")
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    t = np.array(tris, dtype=np.int64).reshape(-1, 3)
    if len(t):
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        good = np.linalg.norm(np.cross(b - a, c - a), axis=1) > 0
        if not good.all():
            log.warning("dropped %d degenerate triangles", int((~good).sum()))
        t = t[good]
    mask = None
    if mask_text is not None:
        mask = parse_mask(mask_text, len(v))
    return TriMesh(v, t, mask)


def parse_mask(text, n_vertices) -> np.ndarray:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaError(f"not UTF-8 text ({exc.reason})", f"byte {exc.start}") from None
    vals = []
    for ln, line in enumerate(text.splitlines(), 1):
        tok = line.strip()
        if not tok:
            continue
        if tok not in ("0", "1"):
            raise SchemaError(f"mask entries must be 0 or 1, got {tok[:20]!r}", f"line {ln}")
        vals.append(tok == "1")
    if len(vals) != n_vertices:
        raise CountMismatch(f"mask has {len(vals)} entries for {n_vertices} vertices")
    return np.array(vals, dtype=bool)


def load_obj(path, mask_path=None) -> TriMesh:
    """Load an OBJ; a sibling ``<stem>.mask`` file is picked up when ``mask_path`` is not given."""
    path = Path(path)
    if mask_path is None:
        cand = path.with_suffix(".mask")
        mask_path = cand if cand.exists() else None
    mask_text = Path(mask_path).read_bytes() if mask_path is not None else None
    return parse_obj(path.read_bytes(), mask_text)


def dump_obj(mesh: TriMesh) -> str:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    return "\n".join(lines) + "\n"


def write_obj(path, mesh: TriMesh, write_mask: bool = False):
    path = Path(path)
    path.write_text(dump_obj(mesh))
    if write_mask:
        path.with_suffix(".mask").write_text("".join("1\n" if m else "0\n" for m in mesh.mask))


# levels and report

def write_levels(path, levels):
    Path(path).write_text("".join(f"{int(x)}\n" for x in levels))


def parse_levels(text) -> list:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaError(f"not UTF-8 text ({exc.reason})", f"byte {exc.start}") from None
    out = []
    for ln, line in enumerate(text.splitlines(), 1):
        tok = line.strip()
        if not tok:
            continue
        try:
            v = int(tok)
        except ValueError:
            raise SchemaError(f"expected an integer level, got {tok[:20]!r}", f"line {ln}") from None
        if v < 0:
            raise SchemaError("negative level", f"line {ln}")
        out.append(v)
    return out


def read_levels(path) -> list:
    return parse_levels(Path(path).read_bytes())


def write_report(path, report):
    Path(path).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
