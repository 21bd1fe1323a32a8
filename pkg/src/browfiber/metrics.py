"""Evaluation metrics for reconstructed eyebrows.

Root clouds: nearest density error (NDE) and density-aware chamfer
distance (DCD). Lengths: mean length error (MLE) over quantized length
levels. Whole reconstructions: fiber direction distance (FDO) and the IoU
of voxelized capsule unions.

All bidirectional metrics are ``(forward + backward) / 2`` so swapping
the arguments gives a bit-identical value.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import FIBER_POINTS, GROWTH_STEP, FiberSet, RootSet, arc_length, resample_fiber
from .errors import BothEmpty, EmptySet, ShapeMismatch, TooShort

PHIS = (0.04, 0.02, 0.01)
IOU_RADIUS = 0.004
IOU_GRID_RES = 256


def _cloud(x) -> np.ndarray:
    if isinstance(x, RootSet):
        return x.points
    if isinstance(x, FiberSet):
        return x.roots()
    return np.asarray(x, dtype=np.float64).reshape(-1, 3)


def _pairwise(a, b, chunk=2048):
    """Exact Euclidean distances ``(len(a), len(b))`` from coordinate differences."""
    out = np.empty((len(a), len(b)))
    for s in range(0, len(a), chunk):
        d = a[s:s + chunk, None, :] - b[None, :, :]
        out[s:s + chunk] = np.sqrt(np.einsum("ijk,ijk->ij", d, d))
    return out


def _nearest(a, b):
    """Index of the nearest point of ``b`` for every point of ``a`` (lowest index on ties) and its distance."""
    d = _pairwise(a, b)
    idx = np.argmin(d, axis=1)
    return idx, d[np.arange(len(a)), idx]


def den(r, cloud, phi: float) -> int:
    """Neighbours of ``r`` within ``phi``; points equal to ``r`` are not counted."""
    if not phi > 0:
        raise ValueError("phi must be > 0")
    pts = _cloud(cloud)
    r = np.asarray(r, dtype=np.float64).reshape(3)
    diff = pts - r
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return int(np.count_nonzero((dist <= phi) & np.any(pts != r, axis=1)))


def _densities(pts, phi):
    d = _pairwise(pts, pts)
    same = np.all(pts[:, None, :] == pts[None, :, :], axis=2)
    return np.count_nonzero((d <= phi) & ~same, axis=1)


def _directed_root_terms(a, b, phi):
    """Per-point |density error| and distance from ``a`` to its nearest point in ``b``."""
    da = _densities(a, phi)
    db = _densities(b, phi)
    near, dist = _nearest(a, b)
    return da - db[near], dist


def _check(a, b):
    if len(a) == 0 or len(b) == 0:
        raise EmptySet("both root sets must be non-empty")


def nde(pred, gt, phi: float) -> float:
    a, b = _cloud(pred), _cloud(gt)
    _check(a, b)
    fwd, _ = _directed_root_terms(a, b, phi)
    bwd, _ = _directed_root_terms(b, a, phi)
    return (float(np.mean(np.abs(fwd))) + float(np.mean(np.abs(bwd)))) / 2


def dcd(pred, gt, phi: float) -> float:
    a, b = _cloud(pred), _cloud(gt)
    _check(a, b)
    fwd, dfwd = _directed_root_terms(a, b, phi)
    bwd, dbwd = _directed_root_terms(b, a, phi)
    f = float(np.mean(np.abs(fwd + 1) * dfwd))
    g = float(np.mean(np.abs(bwd + 1) * dbwd))
    return (f + g) / 2


def length_level(f, step: float = GROWTH_STEP) -> int:
    """Fiber length quantized to whole growth steps."""
    return int(round(arc_length(f) / step))


def mle(pred_levels, gt_levels, step: float = GROWTH_STEP) -> float:
    """Mean over all fibers of ``step * |level - gt_level|``; inputs are nested per eyebrow."""
    if not step > 0:
        raise ValueError("step must be > 0")
    if len(pred_levels) != len(gt_levels):
        raise ShapeMismatch(f"{len(pred_levels)} vs {len(gt_levels)} eyebrows")
    total, count = 0.0, 0
    for i, (p, g) in enumerate(zip(pred_levels, gt_levels)):
        if len(p) != len(g):
            raise ShapeMismatch(f"eyebrow {i}: {len(p)} vs {len(g)} fibers")
        for a, b in zip(p, g):
            total += step * abs(int(a) - int(b))
        count += len(p)
    if count == 0:
        raise EmptySet("no fibers to compare")
    return total / count


def matched_levels(pred: FiberSet, gt: FiberSet, step: float = GROWTH_STEP):
    """Length levels of each predicted fiber and of the gt fiber with the nearest root."""
    _check(pred.roots(), gt.roots())
    near, _ = _nearest(pred.roots(), gt.roots())
    p = [length_level(f, step) for f in pred.fibers]
    g = [length_level(gt.fibers[j], step) for j in near]
    return p, g


def fiber_directions(f, n: int = FIBER_POINTS) -> np.ndarray:
    """Forward-difference unit directions of the fiber resampled to ``n`` points; the last repeats."""
    if n < 2:
        raise ValueError("n must be >= 2")
    pts = resample_fiber(f, n).points
    seg = np.diff(pts, axis=0)
    seg = seg / np.linalg.norm(seg, axis=1)[:, None]
    return np.vstack([seg, seg[-1:]])


def _fdo_directed(da, db, ra, rb):
    near, _ = _nearest(ra, rb)
    total = 0.0
    for i, j in enumerate(near):
        diff = da[i] - db[j]
        total += float(np.sum(np.sqrt(np.einsum("ij,ij->i", diff, diff))))
    return total / len(da)


def fdo(pred: FiberSet, gt: FiberSet, n: int = FIBER_POINTS) -> float:
    """Per-fiber summed direction distance to the gt fiber with the nearest root, averaged both ways."""
    if len(pred) == 0 or len(gt) == 0:
        raise EmptySet("both fiber sets must be non-empty")
    for f in list(pred) + list(gt):
        if len(f) < 2:
            raise TooShort("every fiber needs at least 2 points for FDO")
    da = np.array([fiber_directions(f, n) for f in pred])
    db = np.array([fiber_directions(f, n) for f in gt])
    ra, rb = pred.roots(), gt.roots()
    return (_fdo_directed(da, db, ra, rb) + _fdo_directed(db, da, rb, ra)) / 2


# voxel occupancy and IoU

@dataclass(frozen=True, eq=False)
class VoxelVolume:
    """Boolean occupancy on the global lattice of cell size ``1 / grid_res``.

    Cell ``offset + (i, j, k)`` spans ``[idx, idx + 1) / grid_res`` per axis,
    so volumes with the same resolution align without resampling.
    """

    occ: np.ndarray
    offset: np.ndarray
    grid_res: float

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.occ))

    @property
    def volume(self) -> float:
        return self.count / self.grid_res ** 3

    @classmethod
    def from_box(cls, lo, hi, grid_res):
        """Cells whose centres lie inside the axis-aligned box."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        i0 = np.ceil(lo * grid_res - 0.5).astype(np.int64)
        i1 = np.floor(hi * grid_res - 0.5).astype(np.int64) + 1
        shape = np.maximum(i1 - i0, 0)
        return cls(np.ones(tuple(shape), dtype=bool), i0, float(grid_res))


def _segment_dist(c, a, b):
    ab = b - a
    L2 = float(ab @ ab)
    if L2 == 0:
        return np.linalg.norm(c - a, axis=1)
    t = np.clip((c - a) @ ab / L2, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(c - proj, axis=1)


def _stamp_segments(occ, offset, segments, radius, grid_res):
    for a, b in segments:
        lo = np.minimum(a, b) - radius
        hi = np.maximum(a, b) + radius
        i0 = np.ceil(lo * grid_res - 0.5).astype(np.int64)
        i1 = np.floor(hi * grid_res - 0.5).astype(np.int64) + 1
        if np.any(i1 <= i0):
            continue
        axes = [np.arange(i0[k], i1[k]) for k in range(3)]
        g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        centers = (g.reshape(-1, 3) + 0.5) / grid_res
        inside = (_segment_dist(centers, a, b) <= radius).reshape(g.shape[:3])
        sl = tuple(slice(i0[k] - offset[k], i1[k] - offset[k]) for k in range(3))
        occ[sl] |= inside


def fibers_to_mesh(fs, radius: float = IOU_RADIUS, grid_res: float = IOU_GRID_RES, threads: int = 1) -> VoxelVolume:
    """Occupancy of the union of capsules of ``radius`` around every fiber segment.

    A single-point fiber contributes a ball. The grid covers the fiber
    bounds padded by ``radius``.
    """
    if not radius > 0 or not grid_res > 0:
        raise ValueError("radius and grid_res must be > 0")
    fibers = list(fs)
    if not fibers:
        raise EmptySet("no fibers to voxelize")
    allpts = np.concatenate([f.points for f in fibers])
    lo = allpts.min(axis=0) - radius
    hi = allpts.max(axis=0) + radius
    offset = np.ceil(lo * grid_res - 0.5).astype(np.int64)
    end = np.floor(hi * grid_res - 0.5).astype(np.int64) + 1
    shape = tuple(np.maximum(end - offset, 1))
    segments = []
    for f in fibers:
        p = f.points
        if len(p) == 1:
            segments.append((p[0], p[0]))
        else:
            segments.extend(zip(p[:-1], p[1:]))
    if threads > 1:
        chunks = [segments[k::threads] for k in range(threads)]
        parts = [np.zeros(shape, dtype=bool) for _ in chunks]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda kc: _stamp_segments(parts[kc[0]], offset, kc[1], radius, grid_res),
                          enumerate(chunks)))
        occ = np.logical_or.reduce(parts)
    else:
        occ = np.zeros(shape, dtype=bool)
        _stamp_segments(occ, offset, segments, radius, grid_res)
    return VoxelVolume(occ, offset, float(grid_res))


def _embed(v: VoxelVolume, lo, shape):
    out = np.zeros(shape, dtype=bool)
    s = v.offset - lo
    sl = tuple(slice(s[k], s[k] + v.occ.shape[k]) for k in range(3))
    out[sl] = v.occ
    return out


def iou(a: VoxelVolume, b: VoxelVolume) -> float:
    """|A and B| / |A or B| over the joint bounds of two same-resolution volumes."""
    if a.grid_res != b.grid_res:
        raise ValueError("volumes must share grid_res")
    if a.count == 0 and b.count == 0:
        raise BothEmpty("both volumes are empty")
    lo = np.minimum(a.offset, b.offset)
    hi = np.maximum(a.offset + np.array(a.occ.shape), b.offset + np.array(b.occ.shape))
    shape = tuple(hi - lo)
    A = _embed(a, lo, shape)
    B = _embed(b, lo, shape)
    inter = np.count_nonzero(A & B)
    union = np.count_nonzero(A | B)
    return inter / union


def capsule_volume(length: float, radius: float) -> float:
    return math.pi * radius ** 2 * length + 4.0 / 3.0 * math.pi * radius ** 3


@dataclass
class MetricsReport:
    nde: dict
    dcd: dict
    mle: float
    fdo: float
    iou: float
    params: dict

    def to_json(self) -> dict:
        out = {}
        for phi, v in self.nde.items():
            out[f"nde_{phi_key(phi)}"] = v
        for phi, v in self.dcd.items():
            out[f"dcd_{phi_key(phi)}"] = v
        out["mle"] = self.mle
        out["fdo"] = self.fdo
        out["iou"] = self.iou
        out["params"] = self.params
        return out


def phi_key(phi: float) -> str:
    """0.04 -> '004'."""
    return format(phi, "g").replace(".", "")


def evaluate(pred: FiberSet, gt: FiberSet, phis=PHIS, fdo_n: int = FIBER_POINTS, radius: float = IOU_RADIUS,
             grid_res: float = IOU_GRID_RES, step: float = GROWTH_STEP, threads: int = 1) -> MetricsReport:
    """Full metric suite of ``pred`` against ``gt``.

    MLE pairs each predicted fiber with the gt fiber of nearest root, which
    reduces to index pairing when both sets grow from the same roots.
    """
    if len(pred) == 0 or len(gt) == 0:
        raise EmptySet("both fiber sets must be non-empty")
    ra, rb = pred.roots(), gt.roots()
    nd = {phi: nde(ra, rb, phi) for phi in phis}
    dc = {phi: dcd(ra, rb, phi) for phi in phis}
    pl, gl = matched_levels(pred, gt, step)
    m = mle([pl], [gl], step)
    f = fdo(pred, gt, fdo_n)
    i = iou(fibers_to_mesh(pred, radius, grid_res, threads), fibers_to_mesh(gt, radius, grid_res, threads))
    params = {"phi": list(phis), "fdo_n": fdo_n, "radius": radius, "grid_res": grid_res, "step": step,
              "n_pred": len(pred), "n_gt": len(gt),
              "fdo_note": f"FDO sums over {fdo_n} points per fiber; its scale grows with fdo_n"}
    return MetricsReport(nd, dc, m, f, i, params)
