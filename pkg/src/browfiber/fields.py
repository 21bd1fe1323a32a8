"""Orientation fields: 3D point -> unit growth direction.

Every field exposes ``query(p)`` for one point and ``directions(points)``
for a batch. Points outside the declared box raise ``OutOfDomain``; the
grower treats that as a stop signal.
"""
from __future__ import annotations

import numpy as np

from .errors import OutOfDomain


def _normalize_rows(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / n, n[..., 0]


class OrientationField:
    lo = None
    hi = None

    def contains(self, p) -> bool:
        if self.lo is None:
            return True
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))

    def query(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64).reshape(3)
        if not self.contains(p):
            raise OutOfDomain(f"point {p.tolist()} outside the field domain")
        return self.directions(p[None, :])[0]

    def directions(self, points) -> np.ndarray:
        raise NotImplementedError


def query_field(field: OrientationField, p) -> np.ndarray:
    return field.query(p)


class _Boxed(OrientationField):
    def _set_box(self, lo, hi):
        if (lo is None) != (hi is None):
            raise ValueError("give both lo and hi or neither")
        if lo is not None:
            self.lo = np.asarray(lo, dtype=np.float64).reshape(3)
            self.hi = np.asarray(hi, dtype=np.float64).reshape(3)


class ConstantField(_Boxed):
    def __init__(self, direction, lo=None, hi=None):
        d = np.asarray(direction, dtype=np.float64).reshape(3)
        self.direction = d / np.linalg.norm(d)
        self._set_box(lo, hi)

    def directions(self, points):
        points = np.asarray(points).reshape(-1, 3)
        return np.broadcast_to(self.direction, points.shape).copy()


class ArcField(_Boxed):
    """Circulation about an axis: tangent to circles around ``center``.

    ``tilt`` adds a component along the axis (helical flow). Points closer
    than ``min_radius`` to the axis are outside the domain.
    """

    def __init__(self, center, axis=(0.0, 0.0, 1.0), tilt=0.0, min_radius=1e-6, lo=None, hi=None):
        self.center = np.asarray(center, dtype=np.float64).reshape(3)
        a = np.asarray(axis, dtype=np.float64).reshape(3)
        self.axis = a / np.linalg.norm(a)
        self.tilt = float(tilt)
        self.min_radius = float(min_radius)
        self._set_box(lo, hi)

    def contains(self, p):
        if not super().contains(p):
            return False
        r = np.asarray(p, dtype=np.float64) - self.center
        r = r - np.dot(r, self.axis) * self.axis
        return bool(np.linalg.norm(r) >= self.min_radius)

    def _tangent(self, points):
        r = np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.center
        r = r - (r @ self.axis)[:, None] * self.axis
        t = np.cross(self.axis, r)
        t, _ = _normalize_rows(t)
        return t

    def directions(self, points):
        d = self._tangent(points) + self.tilt * self.axis
        return _normalize_rows(d)[0]


class SwirlField(ArcField):
    """Arc flow whose tangent is rotated about the axis by ``amplitude * sin(wavenumber * x)``."""

    def __init__(self, center, axis=(0.0, 0.0, 1.0), tilt=0.0, amplitude=0.4,
                 wavenumber=4.0, min_radius=1e-6, lo=None, hi=None):
        super().__init__(center, axis, tilt, min_radius, lo, hi)
        self.amplitude = float(amplitude)
        self.wavenumber = float(wavenumber)

    def directions(self, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        t = self._tangent(points)
        theta = self.amplitude * np.sin(self.wavenumber * points[:, 0])
        rot = np.cos(theta)[:, None] * t + np.sin(theta)[:, None] * np.cross(self.axis, t)
        return _normalize_rows(rot + self.tilt * self.axis)[0]


class VoxelGridField(OrientationField):
    """Vectors stored on a regular node grid spanning ``[lo, hi]``.

    ``vectors`` has shape ``(nx, ny, nz, 3)``; node ``(i, j, k)`` sits at
    ``lo + (i, j, k) * (hi - lo) / (dims - 1)``. Queries interpolate
    trilinearly and renormalize; if the blend cancels to zero the nearest
    node's vector is used instead.
    """

    def __init__(self, vectors, lo, hi):
        v = np.asarray(vectors)
        if v.ndim != 4 or v.shape[3] != 3 or min(v.shape[:3]) < 2:
            raise ValueError("vectors must have shape (nx, ny, nz, 3) with every dim >= 2")
        self.vectors = v
        self.lo = np.asarray(lo, dtype=np.float64).reshape(3)
        self.hi = np.asarray(hi, dtype=np.float64).reshape(3)
        if not np.all(self.hi > self.lo):
            raise ValueError("bounding box must have hi > lo on every axis")
        self.dims = np.array(v.shape[:3])

    @classmethod
    def from_field(cls, field: OrientationField, lo, hi, dims, dtype=np.float32):
        """Sample another field on a node grid."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        axes = [np.linspace(lo[i], hi[i], dims[i]) for i in range(3)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        vec = field.directions(grid).reshape(*dims, 3)
        return cls(vec.astype(dtype), lo, hi)

    def _cell(self, points):
        t = (points - self.lo) / (self.hi - self.lo) * (self.dims - 1)
        i0 = np.clip(np.floor(t).astype(np.int64), 0, self.dims - 2)
        return t, i0, t - i0

    def directions(self, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        t, i0, f = self._cell(points)
        vec = self.vectors
        out = np.zeros((len(points), 3))
        for dx in (0, 1):
            wx = f[:, 0] if dx else 1.0 - f[:, 0]
            for dy in (0, 1):
                wy = f[:, 1] if dy else 1.0 - f[:, 1]
                for dz in (0, 1):
                    wz = f[:, 2] if dz else 1.0 - f[:, 2]
                    v = vec[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz].astype(np.float64)
                    out += (wx * wy * wz)[:, None] * v
        norm = np.linalg.norm(out, axis=1)
        bad = norm < 1e-12
        if np.any(bad):
            near = np.clip(np.rint(t[bad]).astype(np.int64), 0, self.dims - 1)
            out[bad] = vec[near[:, 0], near[:, 1], near[:, 2]]
            norm[bad] = np.linalg.norm(out[bad], axis=1)
            if np.any(norm < 1e-12):
                raise OutOfDomain("field vanishes at the query point")
        return out / norm[:, None]
