"""Command-line front end.

Exit codes: 0 ok, 2 input or parse error, 3 empty result, 4 bad ending
policy, 5 empty metric input. Machine-readable lines on stderr start with
``SUMMARY `` (results) or ``RUN `` (effective parameters).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .core import FIBER_POINTS, GROWTH_STEP, project, tube_mesh
from .errors import (AllSamplesBehindCamera, BothEmpty, BrowError, ConfigInvalid, DegenerateProjection, EmptyRegion,
                     EmptyRoots, EmptySet, FormatError, MissingRoot, NotWatertight, TooShort)
from .growth import (MEAN_FIBER_LENGTH, SMOOTH_THETA_DEG, GrowthConfig, LengthTable, MaxSteps, MeanLength,
                     MeshCut, grow_all)
from .metrics import IOU_GRID_RES, IOU_RADIUS, PHIS, evaluate
from .rootfinder import KMEANS_INITS, LIFT_SAMPLES, DensityGenConfig, density_from_roots, extract_roots_2d, lift_roots
from .synthgen import FIELD_STYLES, SynthConfig, gen_case, write_case

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_EMPTY = 3
EXIT_POLICY = 4
EXIT_METRIC = 5


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# argparse value types with range checks

def _typed(conv, ok, what):
    def parse(text):
        try:
            v = conv(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not ok(v):
            raise argparse.ArgumentTypeError(f"{text!r} is not {what}")
        return v
    return parse


pos_float = _typed(float, lambda v: v > 0 and np.isfinite(v), "a positive number")
nonneg_float = _typed(float, lambda v: v >= 0 and np.isfinite(v), "a non-negative number")
pos_int = _typed(int, lambda v: v >= 1, "a positive integer")
nonneg_int = _typed(int, lambda v: v >= 0, "a non-negative integer")
unit_frac = _typed(float, lambda v: 0 < v <= 1, "in (0, 1]")
theta_deg = _typed(float, lambda v: 0 < v < 180, "an angle in (0, 180)")
min_pts_int = _typed(int, lambda v: v >= 1, "a positive integer")
sides_int = _typed(int, lambda v: v >= 3, "an integer >= 3")
fdo_n_int = _typed(int, lambda v: v >= 2, "an integer >= 2")


def phi_list(text):
    try:
        vals = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid phi list {text!r}") from None
    if not vals or any(not (v > 0 and np.isfinite(v)) for v in vals):
        raise argparse.ArgumentTypeError("phi values must be positive")
    return vals


def _summary(**kw):
    print("SUMMARY " + " ".join(f"{k}={v}" for k, v in kw.items()), file=sys.stderr)


def _run_header(cmd, **kw):
    print(f"RUN {cmd} " + " ".join(f"{k}={v}" for k, v in kw.items()), file=sys.stderr)


def _load(what, fn, path, *args):
    """Read an input file, turning I/O and format failures into exit code 2."""
    try:
        return fn(path, *args)
    except FileNotFoundError:
        raise CliError(EXIT_INPUT, f"{what}: no such file: {path}") from None
    except IsADirectoryError:
        raise CliError(EXIT_INPUT, f"{what}: is a directory: {path}") from None
    except (FormatError, OSError) as exc:
        raise CliError(EXIT_INPUT, f"{what}: {path}: {exc}") from None


def _out(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# subcommands

def cmd_extract_roots(args):
    dmap = _load("density", io.read_dmap, args.density)
    camera = _load("camera", io.read_camera, args.camera)
    mesh = _load("mesh", io.load_obj, args.mesh, args.mask)
    _run_header("extract-roots", tau=args.tau if args.tau is not None else f"{args.tau_rel}*max",
                eps=args.eps, min_pts=args.min_pts, samples=args.samples, seed=args.seed, mode=args.mode,
                init=args.init)
    roots2d, lab = extract_roots_2d(dmap, args.tau, args.eps, args.min_pts, args.seed, args.mode,
                                    args.tau_rel, args.init)
    if len(roots2d) == 0:
        _summary(cmd="extract-roots", clusters=0, roots=0)
        raise CliError(EXIT_EMPTY, "no clusters above the density threshold")
    try:
        roots = lift_roots(roots2d, camera, mesh, args.samples, args.seed)
    except (EmptyRegion, AllSamplesBehindCamera) as exc:
        raise CliError(EXIT_INPUT, f"cannot lift roots: {exc}") from None
    io.write_roots(_out(args.out), roots)
    if args.figures:
        from .plotting import plot_density
        plot_density(dmap.values, Path(args.figures) / "roots2d.png", roots2d, title="density and extracted roots")
    _summary(cmd="extract-roots", clusters=lab.cluster_count, roots=len(roots), noise=int(np.sum(lab.labels < 0)),
             out=args.out)
    return EXIT_OK


def parse_ender(spec: str):
    """``mean-length[:len]``, ``mesh:path``, ``max-steps:N`` or ``table:path``."""
    kind, _, arg = spec.partition(":")
    try:
        if kind == "mean-length":
            return MeanLength(float(arg) if arg else MEAN_FIBER_LENGTH)
        if kind == "max-steps":
            return MaxSteps(int(arg))
        if kind == "mesh":
            if not arg:
                raise ValueError("mesh ender needs a path")
            return MeshCut(_load("ender mesh", io.load_obj, arg))
        if kind == "table":
            if not arg:
                raise ValueError("table ender needs a path")
            return LengthTable(_load("ender table", io.read_levels, arg))
    except NotWatertight as exc:
        raise CliError(EXIT_POLICY, f"bad ender {spec!r}: {exc}") from None
    except ValueError as exc:
        raise CliError(EXIT_POLICY, f"bad ender {spec!r}: {exc}") from None
    raise CliError(EXIT_POLICY, f"unknown ender {spec!r}; expected mean-length[:len], mesh:path, max-steps:N "
                                "or table:path")


def cmd_grow(args):
    roots = _load("roots", io.read_roots, args.roots)
    field = _load("field", io.read_ofld, args.field)
    ender = parse_ender(args.ender)
    cfg = GrowthConfig(args.step, args.theta, args.max_steps)
    _run_header("grow", step=f"{cfg.step:g}", theta=f"{cfg.theta_deg:g}", max_steps=cfg.max_steps,
                ender=repr(ender), threads=args.threads)
    try:
        fs = grow_all(roots, field, ender, cfg, threads=args.threads)
    except MissingRoot as exc:
        raise CliError(EXIT_POLICY, str(exc)) from None
    except EmptyRoots:
        raise CliError(EXIT_EMPTY, "no roots to grow") from None
    except BrowError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from None
    io.write_fib(_out(args.out), fs)
    lens = [len(f) for f in fs]
    _summary(cmd="grow", fibers=len(fs), failed=len(fs.meta["failed_roots"]), min_points=min(lens),
             max_points=max(lens), out=args.out)
    return EXIT_OK


def cmd_evaluate(args):
    pred = _load("pred", io.read_fib, args.pred, args.step)
    gt = _load("gt", io.read_fib, args.gt, args.step)
    try:
        rep = evaluate(pred, gt, args.phi, args.fdo_n, args.radius, args.grid_res, args.step, args.threads)
    except (EmptySet, TooShort, BothEmpty) as exc:
        raise CliError(EXIT_METRIC, str(exc)) from None
    out = rep.to_json()
    report = _out(args.report)
    io.write_report(report, rep)
    figs = []
    if not args.no_figures:
        from .plotting import render_report_figures
        fig_dir = Path(args.figures) if args.figures else report.parent
        figs = render_report_figures(pred, gt, out, fig_dir, args.step, prefix=f"{report.stem}_")
    _summary(cmd="evaluate", **{k: f"{v:.6g}" for k, v in out.items() if k != "params"}, report=args.report,
             figures=len(figs))
    return EXIT_OK


def _synth_config(args) -> SynthConfig:
    if args.config:
        try:
            d = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise CliError(EXIT_INPUT, f"config: no such file: {args.config}") from None
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CliError(EXIT_INPUT, f"config: {args.config}: {exc}") from None
        if not isinstance(d, dict):
            raise CliError(EXIT_INPUT, "config must be a JSON object")
    else:
        d = {}
    for key in ("root_count", "seed", "field_style", "width", "height", "hull_radius", "min_separation_px"):
        v = getattr(args, key)
        if v is not None:
            d[key] = v
    try:
        cfg = SynthConfig.from_dict(d)
        cfg.validate()
    except ConfigInvalid as exc:
        raise CliError(EXIT_INPUT, f"invalid synth config: {exc}") from None
    return cfg


def cmd_synth(args):
    cfg = _synth_config(args)
    _run_header("synth", root_count=cfg.root_count, seed=cfg.seed, field_style=cfg.field_style,
                size=f"{cfg.width}x{cfg.height}")
    try:
        case = gen_case(cfg)
    except BrowError as exc:
        raise CliError(EXIT_INPUT, f"invalid synth config: {exc}") from None
    write_case(case, args.out)
    if args.figures:
        from .plotting import plot_density
        plot_density(case.gt_density.values, Path(args.figures) / "density.png", case.roots2d,
                     title="ground-truth density")
    _summary(cmd="synth", roots=len(case.gt_roots), fibers=len(case.gt_fibers), out=args.out)
    return EXIT_OK


def cmd_export_obj(args):
    fs = _load("fibers", io.read_fib, args.fibers)
    mesh = tube_mesh([f.points for f in fs], args.radius, args.sides)
    if len(mesh.triangles) == 0:
        raise CliError(EXIT_METRIC, "no fiber with at least 2 points to export")
    io.write_obj(_out(args.out), mesh)
    _summary(cmd="export-obj", fibers=len(fs), vertices=len(mesh.vertices), triangles=len(mesh.triangles),
             out=args.out)
    return EXIT_OK


def cmd_density_from_roots(args):
    roots = _load("roots", io.read_roots, args.roots)
    camera = _load("camera", io.read_camera, args.camera)
    cfg = DensityGenConfig(args.knn_k, args.beta, args.sigma_min, args.sigma_max, args.truncation)
    _run_header("density-from-roots", w=args.w, h=args.h, knn_k=cfg.knn_k, beta=f"{cfg.beta:g}",
                sigma_min=f"{cfg.sigma_min:g}", sigma_max=f"{cfg.sigma_max:g}", truncation=f"{cfg.truncation_radius:g}")
    try:
        uv = project(camera, roots.points) if len(roots) else np.zeros((0, 2))
    except DegenerateProjection as exc:
        raise CliError(EXIT_INPUT, f"cannot project roots: {exc}") from None
    dmap = density_from_roots(uv, args.w, args.h, cfg)
    io.write_dmap(_out(args.out), dmap)
    if args.figures:
        from .plotting import plot_density
        plot_density(dmap.values, Path(args.figures) / "density.png", uv)
    _summary(cmd="density-from-roots", roots=len(roots), mass=f"{float(dmap.values.sum(dtype=np.float64)):.6g}",
             out=args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="browfiber", description="Fiber-level eyebrow geometry tools.",
                                formatter_class=fmt, allow_abbrev=False)
    p.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_, formatter_class=fmt, allow_abbrev=False)
        sp.set_defaults(func=func)
        return sp

    sp = add("extract-roots", cmd_extract_roots, "Locate 2D roots in a density map and lift them onto the mesh.")
    sp.add_argument("--density", required=True, help="DMAP density map")
    sp.add_argument("--camera", required=True, help="camera JSON")
    sp.add_argument("--mesh", required=True, help="OBJ head or brow mesh")
    sp.add_argument("--mask", default=None, help="per-vertex region mask (default: <mesh>.mask if present)")
    sp.add_argument("--out", required=True, help="output roots FIB")
    sp.add_argument("--tau", type=pos_float, default=None, help="absolute density threshold")
    sp.add_argument("--tau-rel", type=unit_frac, default=0.2, help="threshold as a fraction of the map maximum")
    sp.add_argument("--eps", type=pos_float, default=3.0, help="DBSCAN radius in pixels")
    sp.add_argument("--min-pts", type=min_pts_int, default=4, help="DBSCAN core size (point itself included)")
    sp.add_argument("--samples", type=pos_int, default=LIFT_SAMPLES, help="surface samples for lifting")
    sp.add_argument("--seed", type=nonneg_int, default=0)
    sp.add_argument("--mode", choices=("global", "per-cluster"), default="global")
    sp.add_argument("--init", choices=KMEANS_INITS, default="clusters", help="K-Means starting centres")
    sp.add_argument("--figures", default=None, help="directory for a density/roots figure")

    sp = add("grow", cmd_grow, "Grow one fiber per root through an orientation field.")
    sp.add_argument("--roots", required=True, help="roots FIB")
    sp.add_argument("--field", required=True, help="OFLD orientation field")
    sp.add_argument("--ender", default="mean-length",
                    help="mean-length[:len] | mesh:path | max-steps:N | table:path")
    sp.add_argument("--step", type=pos_float, default=GROWTH_STEP)
    sp.add_argument("--theta", type=theta_deg, default=SMOOTH_THETA_DEG, help="smoothing angle in degrees")
    sp.add_argument("--max-steps", type=pos_int, default=200)
    sp.add_argument("--threads", type=pos_int, default=1)
    sp.add_argument("--seed", type=nonneg_int, default=0, help="unused; growth is deterministic")
    sp.add_argument("--out", required=True, help="output fibers FIB")

    sp = add("evaluate", cmd_evaluate, "Compare predicted fibers with ground truth; write a JSON report and figures.")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--phi", type=phi_list, default=PHIS, help="comma-separated neighbourhood radii")
    sp.add_argument("--fdo-n", type=fdo_n_int, default=FIBER_POINTS)
    sp.add_argument("--radius", type=pos_float, default=IOU_RADIUS, help="capsule radius for IoU")
    sp.add_argument("--grid-res", type=pos_float, default=IOU_GRID_RES, help="voxels per unit for IoU")
    sp.add_argument("--step", type=pos_float, default=GROWTH_STEP, help="length-level step")
    sp.add_argument("--threads", type=pos_int, default=1)
    sp.add_argument("--seed", type=nonneg_int, default=0, help="unused; metrics are deterministic")
    sp.add_argument("--report", required=True, help="output JSON report")
    sp.add_argument("--figures", default=None, help="figure directory (default: next to the report)")
    sp.add_argument("--no-figures", action="store_true")

    sp = add("synth", cmd_synth, "Generate a synthetic eyebrow case directory.")
    sp.add_argument("--config", default=None, help="JSON synth config; inline flags override it")
    sp.add_argument("--root-count", dest="root_count", type=pos_int, default=None)
    sp.add_argument("--seed", type=nonneg_int, default=None)
    sp.add_argument("--field-style", dest="field_style", choices=FIELD_STYLES, default=None)
    sp.add_argument("--width", type=pos_int, default=None)
    sp.add_argument("--height", type=pos_int, default=None)
    sp.add_argument("--hull-radius", dest="hull_radius", type=pos_float, default=None)
    sp.add_argument("--min-separation-px", dest="min_separation_px", type=nonneg_float, default=None)
    sp.add_argument("--out", required=True, help="output case directory")
    sp.add_argument("--figures", default=None, help="directory for a density figure")

    sp = add("export-obj", cmd_export_obj, "Sweep fibers into prism tubes and write an OBJ.")
    sp.add_argument("--fibers", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--radius", type=pos_float, default=IOU_RADIUS)
    sp.add_argument("--sides", type=sides_int, default=6)

    sp = add("density-from-roots", cmd_density_from_roots, "Render the adaptive-Gaussian density map of 3D roots.")
    sp.add_argument("--roots", required=True)
    sp.add_argument("--camera", required=True)
    sp.add_argument("--w", type=pos_int, required=True, help="image width in pixels")
    sp.add_argument("--h", type=pos_int, required=True, help="image height in pixels")
    sp.add_argument("--knn-k", type=pos_int, default=3)
    sp.add_argument("--beta", type=pos_float, default=0.3)
    sp.add_argument("--sigma-min", type=pos_float, default=1.0)
    sp.add_argument("--sigma-max", type=pos_float, default=10.0)
    sp.add_argument("--truncation", type=pos_float, default=3.0, help="kernel radius in sigmas")
    sp.add_argument("--out", required=True)
    sp.add_argument("--figures", default=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        # cross-flag checks, e.g. sigma_min > sigma_max
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
