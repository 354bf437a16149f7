"""CSV and SVG emission for decay curves.

SVG output is byte-stable: matplotlib's SVG id salt is fixed and the date
metadata is dropped.
"""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .ensemble import EXPERIMENTS, EnsembleResult, write_csv  # noqa: E402

SVG_SALT = "xxzlab"


class PlotError(ValueError):
    pass


def render_svg(result: EnsembleResult, path) -> Path:
    """Log-scale line chart of the grid means with error bars.

    Nonpositive means cannot sit on a log axis; they are drawn as open
    downward triangles on the lower edge.  A fitted decay is drawn when present.
    """
    pts = result.points
    if not pts:
        raise PlotError("result has no grid points to plot")
    path = Path(path)
    exp = EXPERIMENTS[result.config["experiment"]]
    pos = [p for p in pts if p.mean > 0]
    cens = [p for p in pts if p.mean <= 0]
    floor = min((p.mean for p in pos), default=1.0) / 10
    with plt.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        if pos:
            ax.errorbar([p.x for p in pos], [p.mean for p in pos],
                        yerr=[min(p.stderr, p.mean * 0.999) for p in pos], fmt="o-",
                        capsize=3, label="mean")
        if cens:
            ax.plot([p.x for p in cens], [floor] * len(cens), "v", mfc="none",
                    label="censored (mean <= 0)")
        fit = result.fit or {}
        if fit.get("theta") is not None:
            xs = [p.x for p in pts]
            lo, hi = min(xs), max(xs)
            ax.plot([lo, hi], [math.exp(fit["intercept"] - fit["theta"] * x) for x in (lo, hi)],
                    "--", label=f"fit theta = {fit['theta']:.3g}")
        ax.set_yscale("log")
        ax.set_xlabel(exp.axis)
        ax.set_ylabel(exp.statistic)
        ax.set_title(exp.description, fontsize=8)
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def emit_plotdata(result: EnsembleResult, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.svg``; returns both paths."""
    if not result.points:
        raise PlotError("result has no grid points to plot")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return write_csv(result, path.with_suffix(".csv")), render_svg(result, path.with_suffix(".svg"))
