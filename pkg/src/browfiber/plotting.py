"""Matplotlib figures written next to CLI outputs. Always uses the Agg backend."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import length_level  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 0.8,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}
PRED_COLOR = "#d95f02"
GT_COLOR = "#1b9e77"


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_density(values, path, roots2d=None, title="density"):
    with plt.rc_context(STYLE):
        h, w = values.shape
        fig, ax = plt.subplots(figsize=(8, 8 * h / w + 0.6))
        im = ax.imshow(values, cmap="magma", origin="upper", extent=(0, w, h, 0))
        if roots2d is not None and len(roots2d):
            r = np.asarray(roots2d)
            ax.plot(r[:, 0], r[:, 1], "+", color="cyan", ms=5, label="roots")
            ax.legend(loc="upper right")
        fig.colorbar(im, ax=ax, fraction=0.02)
        ax.set_title(title)
        ax.set_xlabel("u [px]")
        ax.set_ylabel("v [px]")
        return _save(fig, path)


def plot_fibers(pred, gt, path, title="fibers (x-y projection)"):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(8, 4))
        for fs, color, label in ((gt, GT_COLOR, "gt"), (pred, PRED_COLOR, "pred")):
            for k, f in enumerate(fs):
                p = f.points
                ax.plot(p[:, 0], p[:, 1], color=color, label=label if k == 0 else None)
            r = fs.roots()
            ax.plot(r[:, 0], r[:, 1], ".", color=color, ms=2)
        ax.set_aspect("equal")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def plot_length_levels(pred, gt, path, step):
    with plt.rc_context(STYLE):
        pl = [length_level(f, step) for f in pred]
        gl = [length_level(f, step) for f in gt]
        top = max(pl + gl) + 1
        bins = np.arange(-0.5, top + 0.5)
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.hist([gl, pl], bins=bins, color=[GT_COLOR, PRED_COLOR], label=["gt", "pred"])
        ax.set_xlabel(f"length level (step {step:g})")
        ax.set_ylabel("fibers")
        ax.legend()
        return _save(fig, path)


def plot_metric_bars(report_json: dict, path):
    with plt.rc_context(STYLE):
        keys = [k for k in report_json if k.startswith(("nde_", "dcd_"))]
        fig, axes = plt.subplots(1, 2, figsize=(7, 2.8))
        for ax, prefix in zip(axes, ("nde_", "dcd_")):
            ks = [k for k in keys if k.startswith(prefix)]
            ax.bar([k[len(prefix):] for k in ks], [report_json[k] for k in ks], color=PRED_COLOR)
            ax.set_title(prefix.rstrip("_").upper())
            ax.set_xlabel("phi key")
        fig.suptitle(f"MLE {report_json['mle']:.4g}   FDO {report_json['fdo']:.4g}   IoU {report_json['iou']:.4f}",
                     fontsize=9)
        return _save(fig, path)


def render_report_figures(pred, gt, report_json: dict, outdir, step, prefix: str = ""):
    """Write ``<prefix>fibers.png``, ``<prefix>length_levels.png`` and ``<prefix>metrics.png``."""
    outdir = Path(outdir)
    return [
        plot_fibers(pred, gt, outdir / f"{prefix}fibers.png"),
        plot_length_levels(pred, gt, outdir / f"{prefix}length_levels.png", step),
        plot_metric_bars(report_json, outdir / f"{prefix}metrics.png"),
    ]
