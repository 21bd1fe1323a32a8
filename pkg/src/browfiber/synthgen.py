"""Synthetic eyebrow cases with known ground truth.

A case is a curved brow band (triangle strip) seen by a jittered
perspective camera, roots placed on the band with a minimum pixel
separation, an analytic flow field baked onto a voxel grid, per-root
length levels drawn from a reference length histogram, the fibers grown
from all of that, and a closed hull around the fibers for mesh-cut runs.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core import (FIBER_POINTS, GROWTH_STEP, Camera, Fiber, FiberSet, RootSet, TriMesh, look_at, make_rng,
                   project, resample_fiber, sample_surface, tube_mesh)
from .errors import ConfigInvalid, TooShort
from .fields import ArcField, ConstantField, OrientationField, SwirlField, VoxelGridField
from .growth import GrowthConfig, LengthTable, grow_all
from .rootfinder import DensityGenConfig, DensityMap, density_from_roots

# fibers per length level 1..11 and >=12 in a reference collection (step 0.014)
LEVEL_COUNTS = (881, 4921, 39884, 143449, 68229, 50680, 37236, 22976, 11159, 5035, 2341, 2656)
TAIL_LEVELS = (12, 13, 14, 15)
FIELD_STYLES = ("constant", "arc-tangent", "swirl")


def level_probabilities():
    c = np.asarray(LEVEL_COUNTS, dtype=np.float64)
    return c / c.sum()


@dataclass(frozen=True)
class SynthConfig:
    root_count: int = 40
    seed: int = 0
    field_style: str = "arc-tangent"
    width: int = 1500
    height: int = 600
    # brow band geometry (head units, face width spans [-1, 1])
    brow_y: float = 0.35
    arc_radius: float = 1.2
    half_width: float = 0.8
    thickness: float = 0.2
    bulge_x: float = 0.5
    bulge_y: float = 0.3
    band_res: tuple = (64, 8)
    # camera
    camera_distance: float = 3.0
    focal: float = 2400.0
    azimuth_range: float = 10.0
    polar_range: float = 15.0
    # root placement
    min_separation_px: float = 50.0
    edge_margin_px: float = 30.0
    candidate_pool: int = 20000
    # growth and field baking
    step: float = GROWTH_STEP
    theta_deg: float = 30.0
    field_dims: tuple = (48, 20, 16)
    field_pad: float = 0.3
    hull_radius: float = 0.008
    hull_sides: int = 8
    density: DensityGenConfig = field(default_factory=DensityGenConfig)

    def validate(self):
        if self.root_count < 1:
            raise ConfigInvalid("root_count must be >= 1")
        if self.field_style not in FIELD_STYLES:
            raise ConfigInvalid(f"field_style must be one of {FIELD_STYLES}, got {self.field_style!r}")
        if not (0 <= self.azimuth_range <= 10 and 0 <= self.polar_range <= 15):
            raise ConfigInvalid("camera jitter limited to azimuth +-10 deg and polar +-15 deg")
        if self.width < 1 or self.height < 1 or self.focal <= 0 or self.camera_distance <= 0:
            raise ConfigInvalid("camera parameters must be positive")
        if not (0 < self.half_width < self.arc_radius):
            raise ConfigInvalid("need 0 < half_width < arc_radius")
        if self.thickness <= 0 or self.step <= 0 or self.hull_radius <= 0:
            raise ConfigInvalid("thickness, step and hull_radius must be positive")
        if min(self.band_res) < 1 or min(self.field_dims) < 2 or self.hull_sides < 3:
            raise ConfigInvalid("band_res >= 1, field_dims >= 2, hull_sides >= 3")
        if self.min_separation_px < 0 or self.edge_margin_px < 0 or self.candidate_pool < self.root_count:
            raise ConfigInvalid("bad root placement parameters")

    def to_dict(self):
        d = asdict(self)
        d["band_res"] = list(self.band_res)
        d["field_dims"] = list(self.field_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigInvalid(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        try:
            if "density" in d and isinstance(d["density"], dict):
                d["density"] = DensityGenConfig(**d["density"])
            for k in ("band_res", "field_dims"):
                if k in d:
                    d[k] = tuple(int(x) for x in d[k])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(str(exc)) from exc


@dataclass(frozen=True, eq=False)
class SynthCase:
    config: SynthConfig
    mesh: TriMesh
    hull: TriMesh
    camera: Camera
    gt_roots: RootSet
    roots2d: np.ndarray
    gt_levels: list
    gt_fibers: FiberSet
    gt_fibers_raw: FiberSet
    field: VoxelGridField
    analytic_field: OrientationField
    gt_density: DensityMap


def _q9(a):
    """Round to 9 significant digits so values survive the text fiber format unchanged."""
    a = np.asarray(a, dtype=np.float64)
    return np.array([float(f"{x:.9g}") for x in a.ravel()]).reshape(a.shape)


def brow_band(cfg: SynthConfig) -> TriMesh:
    """Curved strip: an arc in x/y bulging toward +z like a forehead."""
    nu, nv = cfg.band_res
    amax = math.asin(cfg.half_width / cfg.arc_radius)
    a = np.linspace(-amax, amax, nu + 1)
    r = np.linspace(cfg.arc_radius - cfg.thickness / 2, cfg.arc_radius + cfg.thickness / 2, nv + 1)
    A, R = np.meshgrid(a, r, indexing="ij")
    x = R * np.sin(A)
    y = cfg.brow_y + R * np.cos(A) - cfg.arc_radius
    z = -cfg.bulge_x * x ** 2 - cfg.bulge_y * (y - cfg.brow_y) ** 2
    verts = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    tris = []
    for i in range(nu):
        for j in range(nv):
            v00 = i * (nv + 1) + j
            v01, v10, v11 = v00 + 1, v00 + nv + 1, v00 + nv + 2
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return TriMesh(verts, np.array(tris))


def band_center(mesh: TriMesh) -> np.ndarray:
    lo, hi = mesh.bounds()
    return (lo + hi) / 2


def base_camera(cfg: SynthConfig, target) -> Camera:
    eye = np.asarray(target) + np.array([0.0, 0.0, cfg.camera_distance])
    rot, t = look_at(eye, target)
    return Camera(rot, t, cfg.focal, cfg.focal, cfg.width / 2, cfg.height / 2, cfg.width, cfg.height)


def _spherical(v):
    """Azimuth about +y (0 looks down -z) and polar angle from +y, radians."""
    return math.atan2(v[0], v[2]), math.acos(np.clip(v[1], -1.0, 1.0))


def camera_angles(camera: Camera, target):
    """(azimuth, polar) in degrees of the camera position around ``target``."""
    v = camera.position - np.asarray(target, dtype=np.float64)
    az, pol = _spherical(v / np.linalg.norm(v))
    return math.degrees(az), math.degrees(pol)


def orbit_camera(base: Camera, target, az_deg: float, polar_deg: float) -> Camera:
    """Move ``base`` on the sphere around ``target`` (fixed radius) and re-aim at the target."""
    target = np.asarray(target, dtype=np.float64)
    v = base.position - target
    radius = np.linalg.norm(v)
    az, pol = _spherical(v / radius)
    az += math.radians(az_deg)
    pol += math.radians(polar_deg)
    eye = target + radius * np.array([math.sin(pol) * math.sin(az), math.cos(pol), math.sin(pol) * math.cos(az)])
    rot, t = look_at(eye, target)
    return Camera(rot, t, base.fx, base.fy, base.cx, base.cy, base.width, base.height, base.mode)


def jitter_camera(base: Camera, target, seed: int, azimuth_range: float = 10.0, polar_range: float = 15.0):
    """Uniform azimuth in +-azimuth_range and polar offset in +-polar_range degrees."""
    rng = make_rng(seed)
    az = rng.uniform(-azimuth_range, azimuth_range)
    pol = rng.uniform(-polar_range, polar_range)
    return orbit_camera(base, target, az, pol)


def draw_levels(n: int, rng) -> np.ndarray:
    bucket = rng.choice(len(LEVEL_COUNTS), size=n, p=level_probabilities())
    levels = bucket + 1
    tail = levels == len(LEVEL_COUNTS)
    levels[tail] = rng.choice(TAIL_LEVELS, size=int(tail.sum()))
    return levels


def level_bucket(level: int) -> int:
    """Histogram bucket 0..11 of a length level (>= 12 collapses into the last)."""
    return min(max(level, 1), len(LEVEL_COUNTS)) - 1


def make_field(cfg: SynthConfig, lo, hi) -> OrientationField:
    center = (0.0, cfg.brow_y - 0.5, 0.0)
    if cfg.field_style == "constant":
        return ConstantField((-1.0, 0.25, 0.35), lo, hi)
    if cfg.field_style == "arc-tangent":
        return ArcField(center, (0.0, 0.0, 1.0), tilt=0.35, min_radius=0.05, lo=lo, hi=hi)
    return SwirlField(center, (0.0, 0.0, 1.0), tilt=0.35, amplitude=0.35, wavenumber=4.0,
                      min_radius=0.05, lo=lo, hi=hi)


def _place_roots(cfg, mesh, camera, rng_seed):
    pool = sample_surface(mesh, cfg.candidate_pool, region_only=True, seed=rng_seed)
    uv, z = camera.project_with_depth(pool)
    m = cfg.edge_margin_px
    ok = (z > 1e-9) & (uv[:, 0] >= m) & (uv[:, 0] < cfg.width - m) & (uv[:, 1] >= m) & (uv[:, 1] < cfg.height - m)
    chosen, chosen_uv = [], np.zeros((0, 2))
    sep2 = cfg.min_separation_px ** 2
    for i in np.flatnonzero(ok):
        if sep2 > 0 and len(chosen):
            d = chosen_uv - uv[i]
            if np.min(np.einsum("ij,ij->i", d, d)) <= sep2:
                continue
        chosen.append(i)
        chosen_uv = np.vstack([chosen_uv, uv[i]])
        if len(chosen) == cfg.root_count:
            break
    if len(chosen) < cfg.root_count:
        raise ConfigInvalid(f"could only place {len(chosen)} of {cfg.root_count} roots at "
                            f"{cfg.min_separation_px} px separation")
    return _q9(pool[chosen])


def hull_polylines(raw: FiberSet):
    """Per fiber: from half a step behind the root to the middle of the last segment.

    Growing with the hull as a mesh-cut then stops exactly at the gt tip,
    which is the first point outside.
    """
    out = []
    for f in raw:
        p = f.points
        if len(p) < 2:
            continue
        d0 = (p[1] - p[0]) / np.linalg.norm(p[1] - p[0])
        half = 0.5 * np.linalg.norm(p[1] - p[0])
        out.append(np.vstack([p[0] - half * d0, p[:-1], (p[-2] + p[-1]) / 2]))
    return out


def gen_case(cfg: SynthConfig) -> SynthCase:
    cfg.validate()
    ss = np.random.SeedSequence(cfg.seed)
    s_cam, s_roots, s_levels = (int(c.generate_state(1)[0]) for c in ss.spawn(3))

    mesh = brow_band(cfg)
    target = band_center(mesh)
    camera = jitter_camera(base_camera(cfg, target), target, s_cam, cfg.azimuth_range, cfg.polar_range)
    roots = _place_roots(cfg, mesh, camera, s_roots)
    roots2d = project(camera, roots)

    lo, hi = mesh.bounds()
    lo = (lo - cfg.field_pad).astype(np.float32).astype(np.float64)
    hi = (hi + cfg.field_pad).astype(np.float32).astype(np.float64)
    analytic = make_field(cfg, lo, hi)
    vfield = VoxelGridField.from_field(analytic, lo, hi, cfg.field_dims)

    levels = draw_levels(cfg.root_count, make_rng(s_levels))
    gcfg = GrowthConfig(cfg.step, cfg.theta_deg, max(200, int(levels.max()) + 1))
    raw = grow_all(roots, vfield, LengthTable(levels), gcfg)
    if raw.meta["failed_roots"] or any(len(f) != lv + 1 for f, lv in zip(raw, levels)):
        raise ConfigInvalid("field domain too small for the drawn fiber lengths; raise field_pad")
    raw = FiberSet([Fiber(_q9(f.points)) for f in raw], cfg.step, {"source": "synthgen"})
    gt = FiberSet([Fiber(_q9(resample_fiber(f, FIBER_POINTS).points)) for f in raw], cfg.step,
                  {"source": "synthgen", "points_per_fiber": FIBER_POINTS})
    hull = tube_mesh(hull_polylines(raw), cfg.hull_radius, cfg.hull_sides)
    dmap = density_from_roots(roots2d, cfg.width, cfg.height, cfg.density)
    return SynthCase(cfg, mesh, hull, camera, RootSet(roots), roots2d, [int(x) for x in levels], gt, raw,
                     vfield, analytic, dmap)


def label_subsequences(f):
    """``(prefix_length, label)`` pairs: proper prefixes continue (1), the full fiber stops (0)."""
    pts = f.points if isinstance(f, Fiber) else np.asarray(f)
    q = len(pts)
    if q < 2:
        raise TooShort("need at least 2 points to label sub-sequences")
    return [(k, 1) for k in range(1, q)] + [(q, 0)]


def rasterize_orientation_map(fs, camera: Camera, width: int, height: int) -> np.ndarray:
    """Per-pixel 2D unit direction of the projected fibers, NaN where empty.

    Fibers are drawn in index order, so later fibers overwrite earlier ones.
    """
    out = np.full((height, width, 2), np.nan)
    for f in fs:
        if len(f.points) < 2:
            continue
        uv, z = camera.project_with_depth(f.points)
        for k in range(len(uv) - 1):
            if camera.mode == "perspective" and (z[k] <= 1e-9 or z[k + 1] <= 1e-9):
                continue
            a, b = uv[k], uv[k + 1]
            seg = b - a
            L = float(np.hypot(*seg))
            if L == 0:
                continue
            d = seg / L
            t = np.linspace(0.0, 1.0, int(math.ceil(2 * L)) + 1)
            px = np.floor(a + t[:, None] * seg).astype(np.int64)
            ok = (px[:, 0] >= 0) & (px[:, 0] < width) & (px[:, 1] >= 0) & (px[:, 1] < height)
            px = px[ok]
            out[px[:, 1], px[:, 0]] = d
    return out


def write_case(case: SynthCase, out_dir):
    """Write every artifact of a case; reruns with the same config are byte-identical."""
    import json
    from pathlib import Path

    from . import io

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_obj(out / "mesh.obj", case.mesh)
    io.write_obj(out / "hull.obj", case.hull)
    io.write_camera(out / "camera.json", case.camera)
    io.write_roots(out / "roots.fib", case.gt_roots)
    io.write_fib(out / "fibers.fib", case.gt_fibers)
    io.write_ofld(out / "field.ofld", case.field)
    io.write_dmap(out / "density.dmap", case.gt_density)
    io.write_levels(out / "levels.txt", case.gt_levels)
    (out / "config.json").write_text(json.dumps(case.config.to_dict(), indent=2, sort_keys=True) + "\n")
    return out
