"""Geometry primitives: fibers, root clouds, triangle meshes, cameras.

Coordinates are head-normalized: the face spans [-1, 1] in width, so a
radius of 0.02 means 1% of the face width. Points are plain ``numpy``
arrays of shape ``(3,)`` or ``(n, 3)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateProjection, EmptyRegion, TooShort

GROWTH_STEP = 0.014
FIBER_POINTS = 20
_DEPTH_EPS = 1e-9


def make_rng(seed):
    """Counter-based generator (Philox) so streams are stable across platforms."""
    return np.random.Generator(np.random.Philox(seed))


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (n, 3) points, got shape {pts.shape}")
    return pts


@dataclass(frozen=True, eq=False)
class Fiber:
    """Ordered polyline, index 0 is the root."""

    points: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.points)
        if len(pts) == 0:
            raise ValueError("a fiber needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("fiber points must be finite")
        if len(pts) > 1 and np.any(np.all(pts[1:] == pts[:-1], axis=1)):
            raise ValueError("consecutive fiber points must be distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @property
    def root(self) -> np.ndarray:
        return self.points[0]


@dataclass(frozen=True, eq=False)
class FiberSet:
    fibers: list
    step: float = GROWTH_STEP
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.fibers)

    def __iter__(self):
        return iter(self.fibers)

    def roots(self) -> np.ndarray:
        if not self.fibers:
            return np.zeros((0, 3))
        return np.array([f.points[0] for f in self.fibers])


@dataclass(frozen=True, eq=False)
class RootSet:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("root coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        v = _as_points(self.vertices) if len(self.vertices) else np.zeros((0, 3))
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        m = np.ones(len(v), dtype=bool) if self.mask is None else np.asarray(self.mask, dtype=bool)
        if m.shape != (len(v),):
            raise ValueError("mask must have one entry per vertex")
        for a in (v, t, m):
            a.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "mask", m)

    def corners(self, tri_idx=None):
        t = self.triangles if tri_idx is None else self.triangles[tri_idx]
        return self.vertices[t[:, 0]], self.vertices[t[:, 1]], self.vertices[t[:, 2]]

    def areas(self, tri_idx=None) -> np.ndarray:
        a, b, c = self.corners(tri_idx)
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def region_triangles(self) -> np.ndarray:
        """Indices of triangles whose three vertices are all in the region mask."""
        return np.flatnonzero(self.mask[self.triangles].all(axis=1))

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole or orthographic camera; world -> camera is ``R @ x + t``.

    The camera looks down its +z axis, image u grows with camera x and v
    with camera y. For orthographic cameras ``fx``/``fy`` are pixels per
    unit.
    """

    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    mode: str = "perspective"

    def __post_init__(self):
        if self.mode not in ("perspective", "orthographic"):
            raise ValueError(f"unknown camera mode {self.mode!r}")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def position(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_camera(self, points) -> np.ndarray:
        return _as_points(points) @ self.rotation.T + self.translation

    def project_with_depth(self, points):
        """Project without raising; returns ``(uv, z_cam)``."""
        pc = self.to_camera(points)
        z = pc[:, 2]
        if self.mode == "orthographic":
            x, y = pc[:, 0], pc[:, 1]
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                x, y = pc[:, 0] / z, pc[:, 1] / z
        uv = np.column_stack([self.fx * x + self.cx, self.fy * y + self.cy])
        return uv, z


def look_at(eye, target, up=(0.0, 1.0, 0.0)):
    """Rotation and translation of a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    return rot, -rot @ eye


def orthographic_camera(width, height, scale):
    """Identity-pose orthographic camera centred on the image."""
    return Camera(np.eye(3), np.zeros(3), scale, scale, width / 2, height / 2,
                  width, height, mode="orthographic")


def project(camera: Camera, p) -> np.ndarray:
    """Continuous pixel coordinates of one point ``(2,)`` or many ``(n, 2)``."""
    single = np.ndim(p) == 1
    uv, z = camera.project_with_depth(p)
    if camera.mode == "perspective" and np.any(np.abs(z) <= _DEPTH_EPS):
        raise DegenerateProjection("point lies on the camera plane")
    return uv[0] if single else uv


def positional_encoding(p, num_frequencies: int) -> np.ndarray:
    """``[x, y, z]`` followed by ``sin(2^k pi c), cos(2^k pi c)`` per axis and octave."""
    if num_frequencies < 0:
        raise ValueError("num_frequencies must be >= 0")
    p = np.asarray(p, dtype=np.float64).reshape(3)
    out = [p]
    freqs = (2.0 ** np.arange(num_frequencies)) * np.pi
    for c in p:
        ang = freqs * c
        out.append(np.column_stack([np.sin(ang), np.cos(ang)]).ravel())
    return np.concatenate(out)


def sample_surface(mesh: TriMesh, count: int, region_only: bool = True, seed: int = 0) -> np.ndarray:
    """Area-weighted uniform samples on the (masked) mesh surface, shape ``(count, 3)``."""
    tri = mesh.region_triangles() if region_only else np.arange(len(mesh.triangles))
    if len(tri) == 0:
        raise EmptyRegion("no triangles in the sampling region")
    areas = mesh.areas(tri)
    total = areas.sum()
    if total <= 0:
        raise EmptyRegion("sampling region has zero area")
    rng = make_rng(seed)
    cdf = np.cumsum(areas / total)
    cdf[-1] = 1.0
    pick = np.searchsorted(cdf, rng.random(count), side="right")
    pick = np.minimum(pick, len(tri) - 1)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    a, b, c = mesh.corners(tri[pick])
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    return w0[:, None] * a + w1[:, None] * b + w2[:, None] * c


def arc_length(f) -> float:
    pts = f.points if isinstance(f, Fiber) else _as_points(f)
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def resample_fiber(f, n: int) -> Fiber:
    """``n`` points at equal arc-length spacing; endpoints are kept exactly."""
    pts = f.points if isinstance(f, Fiber) else _as_points(f)
    if len(pts) < 2:
        raise TooShort("cannot resample a fiber with fewer than 2 points")
    if n < 2:
        raise ValueError("n must be >= 2")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0:
        raise TooShort("fiber has zero length")
    targets = np.linspace(0.0, total, n)
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    frac = (targets - cum[idx]) / seg[idx]
    out = pts[idx] + frac[:, None] * (pts[idx + 1] - pts[idx])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return Fiber(out)


# mesh queries used by the mesh-cut ender

# generic direction so rays rarely graze edges or vertices
_RAY_DIR = np.array([0.5773502691896258, 0.5163977794943222, 0.6324555320336759])
_RAY_DIR = _RAY_DIR / np.linalg.norm(_RAY_DIR)


def is_watertight(mesh: TriMesh) -> bool:
    """Every undirected edge is shared by exactly two triangles."""
    t = mesh.triangles
    if len(t) == 0:
        return False
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges.sort(axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


def shell_labels(mesh: TriMesh) -> np.ndarray:
    """Connected-component id of every triangle (triangles sharing a vertex are connected)."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    t = mesh.triangles
    nt, nv = len(t), len(mesh.vertices)
    rows = np.repeat(np.arange(nt), 3)
    g = coo_matrix((np.ones(3 * nt), (rows, nt + t.ravel())), shape=(nt + nv, nt + nv))
    _, lab = connected_components(g, directed=False)
    return lab[:nt]


def _ray_hits(mesh: TriMesh, p, direction=_RAY_DIR) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    a, b, c = mesh.corners()
    e1 = b - a
    e2 = c - a
    h = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(det) > 1e-14
    inv = np.zeros_like(det)
    inv[ok] = 1.0 / det[ok]
    s = p - a
    u = inv * np.einsum("ij,ij->i", s, h)
    q = np.cross(s, e1)
    v = inv * (q @ direction)
    t = inv * np.einsum("ij,ij->i", e2, q)
    return ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-12)


def ray_crossings(mesh: TriMesh, p, direction=_RAY_DIR) -> int:
    """Number of triangles hit by the ray ``p + t * direction`` for ``t > 0`` (Moller-Trumbore)."""
    return int(_ray_hits(mesh, p, direction).sum())


def point_in_mesh(mesh: TriMesh, p, shells=None) -> bool:
    """Inside the union of the mesh's closed shells: odd ray parity for at least one shell.

    ``shells`` is the per-triangle output of ``shell_labels``; without it
    the whole mesh is one parity test.
    """
    hits = _ray_hits(mesh, p)
    if shells is None:
        return int(hits.sum()) % 2 == 1
    return bool(np.any(np.bincount(shells[hits]) % 2 == 1))


def point_on_mesh(mesh: TriMesh, p, tol: float = 1e-9) -> bool:
    """True if ``p`` lies on some triangle (barycentric containment within ``tol``)."""
    p = np.asarray(p, dtype=np.float64)
    a, b, c = mesh.corners()
    v0, v1, v2 = b - a, c - a, p - a
    n = np.cross(v0, v1)
    nn = np.linalg.norm(n, axis=1)
    dist = np.abs(np.einsum("ij,ij->i", v2, n)) / nn
    d00 = np.einsum("ij,ij->i", v0, v0)
    d01 = np.einsum("ij,ij->i", v0, v1)
    d11 = np.einsum("ij,ij->i", v1, v1)
    d20 = np.einsum("ij,ij->i", v2, v0)
    d21 = np.einsum("ij,ij->i", v2, v1)
    den = d00 * d11 - d01 * d01
    bv = (d11 * d20 - d01 * d21) / den
    bw = (d00 * d21 - d01 * d20) / den
    bu = 1.0 - bv - bw
    inside = (bu >= -tol) & (bv >= -tol) & (bw >= -tol) & (dist <= tol)
    return bool(inside.any())


def tube_mesh(polylines: Sequence[np.ndarray], radius: float, sides: int = 6) -> TriMesh:
    """Sweep each polyline (>= 2 points) into a closed prism tube with flat caps.

    Ring ``k`` of a polyline holds ``sides`` vertices; caps are fans over the
    first and last ring, so every tube is watertight.
    """
    if sides < 3:
        raise ValueError("sides must be >= 3")
    verts, tris = [], []
    base = 0
    ang = 2 * np.pi * np.arange(sides) / sides
    for pts in polylines:
        pts = _as_points(pts)
        if len(pts) < 2:
            continue
        seg = np.diff(pts, axis=0)
        seg /= np.linalg.norm(seg, axis=1)[:, None]
        tang = np.empty_like(pts)
        tang[0], tang[-1] = seg[0], seg[-1]
        if len(pts) > 2:
            mid = seg[:-1] + seg[1:]
            nrm = np.linalg.norm(mid, axis=1)
            mid[nrm > 1e-12] /= nrm[nrm > 1e-12][:, None]
            mid[nrm <= 1e-12] = seg[1:][nrm <= 1e-12]
            tang[1:-1] = mid
        # parallel-transported frame
        helper = np.array([0.0, 0.0, 1.0]) if abs(tang[0][2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        nvec = np.cross(tang[0], helper)
        nvec /= np.linalg.norm(nvec)
        rings = []
        for k in range(len(pts)):
            if k:
                nvec = nvec - np.dot(nvec, tang[k]) * tang[k]
                nvec /= np.linalg.norm(nvec)
            bvec = np.cross(tang[k], nvec)
            rings.append(pts[k] + radius * (np.outer(np.cos(ang), nvec) + np.outer(np.sin(ang), bvec)))
        verts.append(np.concatenate(rings))
        m = len(pts)
        for k in range(m - 1):
            for s in range(sides):
                a = base + k * sides + s
                b = base + k * sides + (s + 1) % sides
                c = base + (k + 1) * sides + s
                d = base + (k + 1) * sides + (s + 1) % sides
                tris.append((a, c, b))
                tris.append((b, c, d))
        for s in range(1, sides - 1):
            tris.append((base, base + s + 1, base + s))
            last = base + (m - 1) * sides
            tris.append((last, last + s, last + s + 1))
        base += m * sides
    if not verts:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriMesh(np.concatenate(verts), np.array(tris, dtype=np.int64))
