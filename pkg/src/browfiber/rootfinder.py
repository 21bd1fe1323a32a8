"""Root localisation from a 2D density map.

Pipeline: threshold the map into candidate pixels, count clusters with
DBSCAN, place that many centres with K-Means, then lift every 2D centre
to the nearest projected surface sample of the brow region.

Pixel ``(row, col)`` has its centre at continuous coordinate
``(u, v) = (col + 0.5, row + 0.5)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import vq
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .core import Camera, RootSet, TriMesh, make_rng, sample_surface
from .errors import AllSamplesBehindCamera, DimensionMismatch, KTooLarge

NOISE = -1
KMEANS_INITS = ("clusters", "k-means++")
# surface samples for lifting; at ~1e6 the sample spacing on the brow band
# is well under the growth step
LIFT_SAMPLES = 1_000_000


@dataclass(frozen=True, eq=False)
class DensityMap:
    values: np.ndarray  # (height, width) float32

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("density map must be a non-empty 2D grid")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("density values must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]

    @classmethod
    def zeros(cls, width, height):
        return cls(np.zeros((height, width), dtype=np.float32))


@dataclass(frozen=True)
class DensityGenConfig:
    knn_k: int = 3
    beta: float = 0.3
    sigma_min: float = 1.0
    sigma_max: float = 10.0
    truncation_radius: float = 3.0

    def __post_init__(self):
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if not (0 < self.sigma_min <= self.sigma_max):
            raise ValueError("need 0 < sigma_min <= sigma_max")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.truncation_radius <= 0:
            raise ValueError("truncation_radius must be > 0")


@dataclass(frozen=True, eq=False)
class ClusterLabeling:
    labels: np.ndarray
    cluster_count: int


def adaptive_sigmas(roots2d, cfg: DensityGenConfig) -> np.ndarray:
    """Per-root kernel width: beta times the mean distance to the k nearest other roots."""
    pts = np.asarray(roots2d, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        return np.zeros(0)
    if n == 1:
        return np.array([cfg.sigma_min])
    k = min(cfg.knn_k, n - 1)
    dist, _ = cKDTree(pts).query(pts, k=k + 1)
    mean = dist[:, 1:].mean(axis=1)
    return np.clip(cfg.beta * mean, cfg.sigma_min, cfg.sigma_max)


def density_from_roots(roots2d, width: int, height: int, cfg: DensityGenConfig = DensityGenConfig()) -> DensityMap:
    """Sum of unit-mass Gaussians, one per root, each cut off at ``truncation_radius * sigma``."""
    if width <= 0 or height <= 0:
        raise ValueError("map size must be positive")
    pts = np.asarray(roots2d, dtype=np.float64).reshape(-1, 2)
    out = np.zeros((height, width), dtype=np.float64)
    for (u, v), s in zip(pts, adaptive_sigmas(pts, cfg)):
        rad = cfg.truncation_radius * s
        c0 = max(int(math.floor(u - rad - 0.5)), 0)
        c1 = min(int(math.ceil(u + rad + 0.5)), width)
        r0 = max(int(math.floor(v - rad - 0.5)), 0)
        r1 = min(int(math.ceil(v + rad + 0.5)), height)
        if c0 >= c1 or r0 >= r1:
            continue
        du = np.arange(c0, c1) + 0.5 - u
        dv = np.arange(r0, r1) + 0.5 - v
        d2 = dv[:, None] ** 2 + du[None, :] ** 2
        k = np.exp(-d2 / (2 * s * s)) / (2 * np.pi * s * s)
        k[d2 > rad * rad] = 0.0
        out[r0:r1, c0:c1] += k
    return DensityMap(out.astype(np.float32))


def density_mse(a: DensityMap, b: DensityMap) -> float:
    if a.values.shape != b.values.shape:
        raise DimensionMismatch(f"{a.values.shape} vs {b.values.shape}")
    d = a.values.astype(np.float64) - b.values.astype(np.float64)
    return float(np.mean(d * d))


def threshold_candidates(dmap: DensityMap, tau: float) -> np.ndarray:
    """Pixel centres with value >= tau, row-major order, shape ``(n, 2)`` as (u, v)."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    rows, cols = np.nonzero(dmap.values >= tau)
    return np.column_stack([cols + 0.5, rows + 0.5]).astype(np.float64)


def dbscan(points, eps: float, min_pts: int) -> ClusterLabeling:
    """Density-based clustering; a point is core if its eps-ball (itself included) holds >= min_pts points.

    Gives the same labels as the classic sequential scan in index order:
    clusters are numbered by their lowest-index core point and a border
    point joins the earliest cluster that reaches it.
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("need eps > 0 and min_pts >= 1")
    pts = np.asarray(points, dtype=np.float64).reshape(len(points), -1)
    n = len(pts)
    if n == 0:
        return ClusterLabeling(np.zeros(0, dtype=np.int64), 0)
    pairs = cKDTree(pts).query_pairs(eps, output_type="ndarray")
    i, j = (pairs[:, 0], pairs[:, 1]) if len(pairs) else (np.zeros(0, int), np.zeros(0, int))
    counts = np.bincount(np.concatenate([i, j]), minlength=n) + 1
    core = counts >= min_pts

    cc = core[i] & core[j]
    graph = coo_matrix((np.ones(cc.sum()), (i[cc], j[cc])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)

    labels = np.full(n, NOISE, dtype=np.int64)
    core_idx = np.flatnonzero(core)
    # order components by their first core point
    _, first = np.unique(comp[core_idx], return_index=True)
    order = np.argsort(core_idx[first])
    remap = np.empty(len(first), dtype=np.int64)
    remap[order] = np.arange(len(first))
    comp_ids = np.unique(comp[core_idx])
    lookup = dict(zip(comp_ids.tolist(), remap.tolist()))
    labels[core_idx] = [lookup[c] for c in comp[core_idx].tolist()]

    # border points: non-core with a core neighbour take the smallest cluster id
    big = np.iinfo(np.int64).max
    border = np.full(n, big)
    for a, b in ((i, j), (j, i)):
        m = (~core[a]) & core[b]
        np.minimum.at(border, a[m], labels[b[m]])
    hit = border < big
    labels[hit] = border[hit]
    return ClusterLabeling(labels, len(first))


def kmeans_objective(points, centers) -> float:
    pts = np.asarray(points, dtype=np.float64)
    d2 = ((pts[:, None, :] - np.asarray(centers)[None, :, :]) ** 2).sum(-1)
    return float(d2.min(axis=1).sum())


def _sq_dist_to(points, center):
    d = points - center
    return np.einsum("ij,ij->i", d, d)


def _kmeanspp(pts, k, rng):
    """Greedy k-means++ seeding (a few candidate draws per centre, keep the best)."""
    n = len(pts)
    trials = 2 + int(math.log(k))
    centers = np.empty((k, pts.shape[1]))
    centers[0] = pts[rng.integers(n)]
    closest = _sq_dist_to(pts, centers[0])
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            # all remaining points coincide with chosen centres
            centers[c] = pts[rng.integers(n)]
            continue
        cdf = np.cumsum(closest)
        picks = np.searchsorted(cdf, rng.random(trials) * cdf[-1], side="right")
        picks = np.minimum(picks, n - 1)
        d = np.minimum(closest[None, :], _sq_dist_many(pts, pts[picks]))
        best = int(np.argmin(d.sum(axis=1)))
        centers[c] = pts[picks[best]]
        closest = d[best]
    return centers


def _sq_dist_many(pts, centers):
    """Squared distances, shape (len(centers), len(pts))."""
    d = pts[None, :, :] - centers[:, None, :]
    return np.einsum("kij,kij->ki", d, d)


def _assign(pts, centers):
    """Nearest centre per point (lowest centre index on ties) and the squared distance."""
    lab, dist = vq(pts, centers, check_finite=False)
    return lab, dist * dist


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100, return_history: bool = False, init=None):
    """Lloyd iterations from greedy k-means++ seeding.

    Stops at an assignment fixpoint or after ``max_iter`` rounds. Centres
    are returned sorted by (u, v). An emptied cluster keeps its centre.
    ``init`` (k, dim) replaces the seeding with given starting centres.
    """
    pts = np.asarray(points, dtype=np.float64)
    pts = pts.reshape(len(pts), -1)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(pts):
        raise KTooLarge(f"k={k} exceeds {len(pts)} points")
    if init is None:
        centers = _kmeanspp(pts, k, make_rng(seed))
    else:
        centers = np.array(init, dtype=np.float64).reshape(k, pts.shape[1])
    labels, d2 = _assign(pts, centers)
    history = [float(d2.sum())]
    for _ in range(max_iter):
        counts = np.bincount(labels, minlength=k)
        nz = counts > 0
        centers = centers.copy()
        for ax in range(pts.shape[1]):
            sums = np.bincount(labels, weights=pts[:, ax], minlength=k)
            centers[nz, ax] = sums[nz] / counts[nz]
        new, d2 = _assign(pts, centers)
        history.append(float(d2.sum()))
        if np.array_equal(new, labels):
            break
        labels = new
    order = np.lexsort(centers.T[::-1])
    centers = centers[order]
    return (centers, history) if return_history else centers


def kmeans_objective_fast(pts, centers, labels) -> float:
    d = pts - centers[labels]
    return float(np.einsum("ij,ij->", d, d))


def extract_roots_2d(dmap: DensityMap, tau: float | None = None, eps: float = 3.0, min_pts: int = 4,
                     seed: int = 0, mode: str = "global", tau_rel: float = 0.2, init: str = "clusters"):
    """Threshold, DBSCAN for the cluster count, K-Means for the centres.

    ``tau`` defaults to ``tau_rel * max(map)``. The global K-Means starts
    from the DBSCAN cluster centroids (``init="clusters"``) or from
    k-means++ seeds (``init="k-means++"``, using ``seed``); k-means++ on
    dozens of equal blobs often parks two seeds in one blob, which Lloyd
    cannot undo. ``mode="per-cluster"`` skips K-Means and returns the
    centroids themselves. Returns ``(roots (k, 2), labeling)``.
    """
    if mode not in ("global", "per-cluster"):
        raise ValueError(f"unknown mode {mode!r}")
    if init not in KMEANS_INITS:
        raise ValueError(f"unknown init {init!r}")
    if tau is None:
        tau = tau_rel * float(dmap.values.max())
    if not tau > 0:
        return np.zeros((0, 2)), ClusterLabeling(np.zeros(0, dtype=np.int64), 0)
    cand = threshold_candidates(dmap, tau)
    lab = dbscan(cand, eps, min_pts)
    if lab.cluster_count == 0:
        return np.zeros((0, 2)), lab
    members = cand[lab.labels != NOISE]
    ids = lab.labels[lab.labels != NOISE]
    k = lab.cluster_count
    counts = np.bincount(ids, minlength=k)
    centroids = np.column_stack([np.bincount(ids, weights=members[:, a], minlength=k) / counts
                                 for a in range(2)])
    if mode == "per-cluster":
        centers = centroids[np.lexsort(centroids.T[::-1])]
    elif init == "clusters":
        centers = kmeans(members, k, init=centroids)
    else:
        centers = kmeans(members, k, seed=seed)
    return centers, lab


def lift_roots(roots2d, camera: Camera, mesh: TriMesh, sample_count: int = LIFT_SAMPLES, seed: int = 0,
               samples=None) -> RootSet:
    """Each 2D root takes the 3D position of its nearest projected surface sample.

    Samples behind a perspective camera are ignored. Ties go to the lowest
    sample index. ``samples`` overrides the surface sampling.
    """
    roots2d = np.asarray(roots2d, dtype=np.float64).reshape(-1, 2)
    if samples is None:
        if sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        samples = sample_surface(mesh, sample_count, region_only=True, seed=seed)
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    uv, z = camera.project_with_depth(samples)
    keep = np.ones(len(samples), dtype=bool) if camera.mode == "orthographic" else z > 1e-9
    if not np.any(keep):
        raise AllSamplesBehindCamera("no surface sample lies in front of the camera")
    idx = np.flatnonzero(keep)
    if len(roots2d) == 0:
        return RootSet(np.zeros((0, 3)))
    proj = uv[idx]
    tree = cKDTree(proj, balanced_tree=False, compact_nodes=False)
    dist, _ = tree.query(roots2d)
    chosen = np.empty(len(roots2d), dtype=np.int64)
    for r, d in enumerate(dist):
        cand = np.array(tree.query_ball_point(roots2d[r], d * (1 + 1e-9) + 1e-12), dtype=np.int64)
        dd = np.linalg.norm(proj[cand] - roots2d[r], axis=1)
        chosen[r] = idx[cand[dd == dd.min()].min()]
    return RootSet(samples[chosen])
