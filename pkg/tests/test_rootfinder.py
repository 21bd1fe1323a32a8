import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from browfiber.core import Camera, TriMesh, look_at, orthographic_camera, point_on_mesh, sample_surface
from browfiber.errors import AllSamplesBehindCamera, DimensionMismatch, EmptyRegion, KTooLarge
from browfiber.rootfinder import (NOISE, DensityGenConfig, DensityMap, adaptive_sigmas, dbscan, density_from_roots,
                                  density_mse, extract_roots_2d, kmeans, kmeans_objective, lift_roots,
                                  threshold_candidates)
import oracles


# density maps

def test_empty_roots_give_zero_map():
    m = density_from_roots(np.zeros((0, 2)), 30, 20)
    assert m.values.shape == (20, 30) and not m.values.any()


def test_single_root_mass_and_peak():
    cfg = DensityGenConfig(sigma_min=2.0, sigma_max=2.0)
    m = density_from_roots([[25.5, 15.5]], 51, 31, cfg)
    total = float(m.values.sum(dtype=np.float64))
    assert 0.95 <= total <= 1.0
    r, c = np.unravel_index(np.argmax(m.values), m.values.shape)
    assert (c, r) == (25, 15)


def test_single_root_uses_sigma_min():
    assert np.array_equal(adaptive_sigmas(np.array([[3.0, 4.0]]), DensityGenConfig()), [1.0])


def test_two_distant_roots_mass():
    m = density_from_roots([[40.0, 40.0], [120.0, 50.0]], 160, 90)
    # each kernel keeps 1 - exp(-r^2 / 2) of its mass inside r = 3 sigma
    expected = 2 * (1 - np.exp(-4.5))
    assert abs(float(m.values.sum(dtype=np.float64)) - expected) < 5e-3


def test_adaptive_sigma_formula():
    pts = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 20.0], [30.0, 40.0]])
    cfg = DensityGenConfig(knn_k=2, beta=0.5, sigma_min=0.1, sigma_max=100)
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    d[np.arange(4), np.arange(4)] = np.inf
    expected = 0.5 * np.sort(d, axis=1)[:, :2].mean(axis=1)
    assert np.allclose(adaptive_sigmas(pts, cfg), expected)


@given(st.lists(st.tuples(st.floats(5, 95), st.floats(5, 55)), min_size=1, max_size=12))
def test_density_mass_bounds(pts):
    m = density_from_roots(np.array(pts), 100, 60)
    total = float(m.values.sum(dtype=np.float64))
    n = len(pts)
    # kernels clipped by the border lose mass, so only the upper bound holds here
    assert total <= n * (1 + 1e-5)
    assert np.all(m.values >= 0) and np.all(np.isfinite(m.values))


def test_density_mass_lower_bound_interior():
    rng = np.random.default_rng(1)
    pts = rng.uniform(40, 160, (15, 2))
    m = density_from_roots(pts, 200, 200)
    assert 0.9 * 15 <= float(m.values.sum(dtype=np.float64)) <= 15


def test_density_config_validation():
    for kw in ({"knn_k": 0}, {"sigma_min": 0}, {"sigma_min": 5, "sigma_max": 4}, {"beta": 0}):
        with pytest.raises(ValueError):
            DensityGenConfig(**kw)


def test_density_mse_examples():
    z = DensityMap(np.zeros((10, 10), dtype=np.float32))
    o = DensityMap(np.ones((10, 10), dtype=np.float32))
    assert density_mse(z, z) == 0.0
    assert density_mse(z, o) == 1.0
    b = np.zeros((3, 3), dtype=np.float32)
    b[1, 1] = 3
    assert density_mse(DensityMap(np.zeros((3, 3), dtype=np.float32)), DensityMap(b)) == 1.0
    with pytest.raises(DimensionMismatch):
        density_mse(z, DensityMap(np.zeros((3, 3), dtype=np.float32)))


def test_density_map_validation():
    with pytest.raises(ValueError):
        DensityMap(np.array([[-1.0]], dtype=np.float32))
    with pytest.raises(ValueError):
        DensityMap(np.array([[np.inf]], dtype=np.float32))


# thresholding

def test_threshold_candidates():
    v = np.arange(1, 13, dtype=np.float32).reshape(3, 4)
    assert len(threshold_candidates(DensityMap(v), 0.0)) == 12
    assert len(threshold_candidates(DensityMap(v), 13.0)) == 0
    c = np.zeros((3, 3), dtype=np.float32)
    c[1, 1] = 1
    assert np.array_equal(threshold_candidates(DensityMap(c), 0.5), [[1.5, 1.5]])
    # row-major order
    got = threshold_candidates(DensityMap(v), 6.0)
    assert np.array_equal(got[:3], [[1.5, 1.5], [2.5, 1.5], [3.5, 1.5]])


# DBSCAN

def test_two_blobs():
    rng = np.random.default_rng(0)
    a = rng.uniform(0, 1, (10, 2))
    b = rng.uniform(0, 1, (10, 2)) + [20, 0]
    lab = dbscan(np.vstack([a, b]), 2.0, 3)
    assert lab.cluster_count == 2 and not np.any(lab.labels == NOISE)


def test_isolated_point_is_noise():
    lab = dbscan(np.array([[0.0, 0.0]]), 1.0, 2)
    assert lab.cluster_count == 0 and lab.labels[0] == NOISE


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.5, 3.0), st.integers(1, 5))
def test_dbscan_matches_sequential_scan(seed, eps, min_pts):
    pts = np.random.default_rng(seed).uniform(0, 10, (20, 2))
    lab = dbscan(pts, eps, min_pts)
    want, k = oracles.dbscan_sequential(pts.tolist(), eps, min_pts)
    assert lab.cluster_count == k
    assert lab.labels.tolist() == want


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.5, 3.0), st.integers(1, 5))
def test_dbscan_count_permutation_invariant(seed, eps, min_pts):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 10, (40, 2))
    perm = rng.permutation(40)
    assert dbscan(pts, eps, min_pts).cluster_count == dbscan(pts[perm], eps, min_pts).cluster_count


def test_dbscan_ids_contiguous():
    pts = np.random.default_rng(5).uniform(0, 30, (200, 2))
    lab = dbscan(pts, 2.0, 3)
    ids = sorted(set(lab.labels.tolist()) - {NOISE})
    assert ids == list(range(lab.cluster_count))


# K-Means

def test_kmeans_single_cluster_is_centroid():
    pts = np.random.default_rng(0).normal(size=(50, 2))
    assert np.allclose(kmeans(pts, 1), pts.mean(axis=0)[None, :])


def test_kmeans_k_equals_n():
    pts = np.random.default_rng(1).normal(size=(7, 2))
    got = kmeans(pts, 7)
    assert np.allclose(got, pts[np.lexsort(pts.T[::-1])])


def test_kmeans_two_blobs():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(30, 2)) * 0.1
    b = rng.normal(size=(30, 2)) * 0.1 + [50, 5]
    got = kmeans(np.vstack([a, b]), 2, seed=3)
    assert np.allclose(got, [a.mean(axis=0), b.mean(axis=0)], atol=1e-6)


def test_kmeans_too_large():
    with pytest.raises(KTooLarge):
        kmeans(np.zeros((3, 2)), 4)


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 8))
def test_kmeans_objective_non_increasing(seed, k):
    pts = np.random.default_rng(seed).uniform(0, 10, (60, 2))
    _, hist = kmeans(pts, k, seed=seed % 1000, return_history=True)
    assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(hist, hist[1:]))


def test_kmeans_objective_oracle():
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 5, (25, 2))
    c = kmeans(pts, 4, seed=1)
    assert np.isclose(kmeans_objective(pts, c), oracles.kmeans_objective(pts.tolist(), c.tolist()), rtol=1e-12)


def test_kmeans_deterministic_and_sorted():
    pts = np.random.default_rng(6).uniform(0, 10, (100, 2))
    a = kmeans(pts, 5, seed=11)
    assert np.array_equal(a, kmeans(pts, 5, seed=11))
    assert np.array_equal(a, a[np.lexsort(a.T[::-1])])


# extraction

def test_extract_from_zero_map():
    roots, lab = extract_roots_2d(DensityMap(np.zeros((20, 30), dtype=np.float32)))
    assert len(roots) == 0 and lab.cluster_count == 0


def test_extract_one_root():
    m = density_from_roots([[40.3, 22.8]], 100, 50)
    roots, _ = extract_roots_2d(m)
    assert len(roots) == 1


@pytest.mark.parametrize("mode", ["global", "per-cluster"])
@pytest.mark.parametrize("init", ["clusters", "k-means++"])
def test_extract_two_far_roots(mode, init):
    gt = np.array([[30.2, 40.7], [170.6, 60.1]])
    m = density_from_roots(gt, 220, 100)
    roots, _ = extract_roots_2d(m, mode=mode, init=init)
    assert len(roots) == 2
    assert np.all(np.linalg.norm(roots - gt, axis=1) < 1.0)


def test_extract_round_trip_many_roots():
    rng = np.random.default_rng(8)
    gt = []
    while len(gt) < 25:
        p = rng.uniform(20, [580, 280])
        if all(np.linalg.norm(p - q) > 45 for q in gt):
            gt.append(p)
    gt = np.array(gt)
    roots, _ = extract_roots_2d(density_from_roots(gt, 600, 300))
    assert len(roots) == len(gt)
    d = np.min(np.linalg.norm(roots[:, None] - gt[None], axis=2), axis=1)
    assert d.max() < 1.0


def test_extract_rejects_unknown_mode():
    m = density_from_roots([[10.0, 10.0]], 20, 20)
    with pytest.raises(ValueError):
        extract_roots_2d(m, mode="local")


# lifting

def _plane_grid(n=10):
    g = np.stack(np.meshgrid(np.linspace(-0.5, 0.5, n), np.linspace(-0.5, 0.5, n), indexing="ij"), -1).reshape(-1, 2)
    return np.column_stack([g, np.zeros(len(g))])


def test_single_sample_lifts_everything(cube):
    cam = orthographic_camera(100, 100, 40.0)
    s = np.array([[0.1, 0.2, 0.3]])
    got = lift_roots([[0, 0], [99, 99], [50, 50]], cam, cube, samples=s)
    assert np.all(got.points == s)


def test_root_on_a_projected_sample(cube):
    cam = orthographic_camera(100, 100, 40.0)
    s = _plane_grid()
    uv = cam.project_with_depth(s)[0]
    got = lift_roots(uv[[17, 63]], cam, cube, samples=s)
    assert np.array_equal(got.points, s[[17, 63]])


def test_lift_matches_exhaustive_scan(cube):
    cam = orthographic_camera(100, 100, 40.0)
    s = _plane_grid()
    uv = cam.project_with_depth(s)[0]
    roots2d = np.random.default_rng(3).uniform(20, 80, (30, 2))
    got = lift_roots(roots2d, cam, cube, samples=s)
    for r, p in zip(roots2d, got.points):
        j, _ = oracles.nearest(r.tolist(), uv.tolist())
        assert np.array_equal(p, s[j])


def test_lift_tie_goes_to_lowest_index(cube):
    cam = orthographic_camera(100, 100, 10.0)
    s = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]])
    got = lift_roots([[50.0, 50.0]], cam, cube, samples=s)
    assert np.array_equal(got.points[0], s[0])


def test_lift_lands_on_surface():
    v = np.array([[-1, -1, 0], [1, -1, 0], [1, 1, 0.3], [-1, 1, 0.3]], dtype=float)
    mesh = TriMesh(v, [[0, 1, 2], [0, 2, 3]])
    rot, t = look_at([0.1, 0.0, 4.0], [0, 0, 0])
    cam = Camera(rot, t, 300.0, 300.0, 100, 100, 200, 200)
    got = lift_roots(np.random.default_rng(0).uniform(60, 140, (20, 2)), cam, mesh, 5000, seed=2)
    assert all(point_on_mesh(mesh, p) for p in got.points)


def test_lift_errors(cube):
    rot, t = look_at([0, 0, 5.0], [0, 0, 10.0])  # looks away from the cube
    cam = Camera(rot, t, 100.0, 100.0, 50, 50, 100, 100)
    with pytest.raises(AllSamplesBehindCamera):
        lift_roots([[50, 50]], cam, cube, 100)
    masked = TriMesh(cube.vertices, cube.triangles, mask=[False] * 8)
    with pytest.raises(EmptyRegion):
        lift_roots([[50, 50]], orthographic_camera(100, 100, 10), masked, 100)


def test_lift_deterministic(small_case):
    c = small_case
    a = lift_roots(c.roots2d, c.camera, c.mesh, 20000, seed=4)
    b = lift_roots(c.roots2d, c.camera, c.mesh, 20000, seed=4)
    assert np.array_equal(a.points, b.points)
    s = sample_surface(c.mesh, 20000, seed=4)
    assert np.array_equal(lift_roots(c.roots2d, c.camera, c.mesh, samples=s).points, a.points)
