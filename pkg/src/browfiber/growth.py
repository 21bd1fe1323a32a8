"""Fiber synthesis: step every root through an orientation field until an ending policy says stop."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (GROWTH_STEP, Fiber, FiberSet, RootSet, TriMesh, arc_length, is_watertight, point_in_mesh,
                   shell_labels)
from .errors import EmptyRoots, MissingRoot, NotWatertight, OutOfDomain, RootOutOfDomain
from .fields import OrientationField

MEAN_FIBER_LENGTH = 0.0714
SMOOTH_THETA_DEG = 30.0


@dataclass(frozen=True)
class GrowthConfig:
    step: float = GROWTH_STEP
    theta_deg: float = SMOOTH_THETA_DEG
    max_steps: int = 200

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be > 0")
        if not 0 < self.theta_deg < 180:
            raise ValueError("theta_deg must lie in (0, 180)")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


def angle_deg(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return math.degrees(math.atan2(np.linalg.norm(np.cross(a, b)), float(np.dot(a, b))))


def smooth_direction(prev, cur, theta_deg: float = SMOOTH_THETA_DEG) -> np.ndarray:
    """Replace ``cur`` with the normalized mean of ``prev`` and ``cur`` when they differ by more than theta.

    Near-antiparallel pairs (>= 179.9 deg) have no usable mean; ``prev`` is kept.
    """
    prev = np.asarray(prev, dtype=np.float64)
    cur = np.asarray(cur, dtype=np.float64)
    ang = angle_deg(prev, cur)
    if ang <= theta_deg:
        return cur
    if ang >= 179.9:
        return prev
    m = prev + cur
    return m / np.linalg.norm(m)


# Ending policies. ``policy(prefix, root_index)`` returns True to stop.

class EndingPolicy:
    def __call__(self, prefix: np.ndarray, root_index: int) -> bool:
        raise NotImplementedError

    def check_roots(self, n_roots: int):
        """Raise before growth if the policy cannot serve ``n_roots`` roots."""


class MeanLength(EndingPolicy):
    def __init__(self, target_len: float = MEAN_FIBER_LENGTH):
        if not target_len > 0:
            raise ValueError("target_len must be > 0")
        self.target_len = float(target_len)

    def __call__(self, prefix, root_index):
        return arc_length(prefix) >= self.target_len

    def __repr__(self):
        return f"mean-length:{self.target_len}"


class MeshCut(EndingPolicy):
    """Stop once the newest point leaves a closed mesh; that point stays on the fiber.

    A mesh made of several closed shells counts as their union, so
    overlapping shells do not cancel each other's parity.
    """

    def __init__(self, mesh: TriMesh):
        if not is_watertight(mesh):
            raise NotWatertight("mesh-cut needs a closed mesh (every edge shared by two triangles)")
        self.mesh = mesh
        self._shells = shell_labels(mesh)
        self._lo, self._hi = mesh.bounds()

    def __call__(self, prefix, root_index):
        tip = prefix[-1]
        if np.any(tip < self._lo) or np.any(tip > self._hi):
            return True
        return not point_in_mesh(self.mesh, tip, self._shells)

    def __repr__(self):
        return f"mesh:<{len(self.mesh.triangles)} triangles>"


class MaxSteps(EndingPolicy):
    def __init__(self, n: int):
        if n < 0:
            raise ValueError("n must be >= 0")
        self.n = int(n)

    def __call__(self, prefix, root_index):
        return len(prefix) - 1 >= self.n

    def __repr__(self):
        return f"max-steps:{self.n}"


class LengthTable(EndingPolicy):
    """Per-root step counts: root ``i`` stops once it has ``table[i] + 1`` points."""

    def __init__(self, table):
        self.table = [int(x) for x in table]
        if any(x < 0 for x in self.table):
            raise ValueError("table entries must be >= 0")

    def check_roots(self, n_roots):
        if n_roots > len(self.table):
            raise MissingRoot(f"length table covers {len(self.table)} roots, {n_roots} requested")

    def __call__(self, prefix, root_index):
        if root_index >= len(self.table) or root_index < 0:
            raise MissingRoot(f"no table entry for root {root_index}")
        return len(prefix) >= self.table[root_index] + 1

    def __repr__(self):
        return f"table:<{len(self.table)} entries>"


def mean_length_ender(target_len: float = MEAN_FIBER_LENGTH) -> EndingPolicy:
    return MeanLength(target_len)


def mesh_cut_ender(mesh: TriMesh) -> EndingPolicy:
    return MeshCut(mesh)


def max_steps_ender(n: int) -> EndingPolicy:
    return MaxSteps(n)


def length_table_ender(table) -> EndingPolicy:
    return LengthTable(table)


def grow_fiber(root, field: OrientationField, ender: EndingPolicy, cfg: GrowthConfig = GrowthConfig(),
               root_index: int = 0) -> Fiber:
    """Grow one fiber: ``p[j+1] = p[j] + step * d[j]``.

    Each iteration queries the field at the tip, smooths against the last
    direction used, then asks the ender about the current prefix. Leaving
    the field domain or reaching ``cfg.max_steps`` also ends growth.
    """
    root = np.asarray(root, dtype=np.float64).reshape(3)
    if not field.contains(root):
        raise RootOutOfDomain(f"root {root.tolist()} outside the field domain")
    pts = [root]
    prev = None
    while True:
        tip = pts[-1]
        try:
            d = field.query(tip)
        except OutOfDomain:
            break
        if prev is not None:
            d = smooth_direction(prev, d, cfg.theta_deg)
        if ender(np.asarray(pts), root_index):
            break
        if len(pts) - 1 >= cfg.max_steps:
            break
        pts.append(tip + cfg.step * d)
        prev = d
    return Fiber(np.asarray(pts))


def grow_all(roots, field: OrientationField, ender: EndingPolicy, cfg: GrowthConfig = GrowthConfig(),
             threads: int = 1) -> FiberSet:
    """One fiber per root, in root order.

    A root outside the field is skipped and recorded in
    ``meta["failed_roots"]``; growth fails only when every root does.
    """
    pts = roots.points if isinstance(roots, RootSet) else np.asarray(roots, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyRoots("no roots to grow from")
    ender.check_roots(len(pts))

    def one(i):
        try:
            return grow_fiber(pts[i], field, ender, cfg, root_index=i)
        except RootOutOfDomain as exc:
            return exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(pts))))
    else:
        results = [one(i) for i in range(len(pts))]
    fibers, failed = [], []
    for i, r in enumerate(results):
        if isinstance(r, Exception):
            failed.append(i)
        else:
            fibers.append(r)
    if not fibers:
        raise results[0]
    return FiberSet(fibers, cfg.step, {"failed_roots": failed, "theta_deg": cfg.theta_deg,
                                       "max_steps": cfg.max_steps, "ender": repr(ender)})
