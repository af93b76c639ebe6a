"""Figure output for study reports.

Figures are written as SVG through matplotlib's SVG backend with a fixed
hash salt and no date stamp, which makes the bytes a pure function of the data.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "svg.hashsalt": "stochlab",
    "svg.fonttype": "none",
    "path.simplify": False,
    "font.size": 10,
    "axes.grid": True,
    "grid.linestyle": ":",
    "grid.alpha": 0.5,
}


def write_svg_plot(series, filename, logx=False, logy=False, xlabel="", ylabel="", title=""):
    """Plot named (x, y) series into a self-contained SVG file.

    ``series`` is a list of (name, x, y). Non-positive values are dropped from
    logarithmic axes.
    """
    if not series:
        raise ValueError("need at least one series")
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for name, x, y in series:
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            if len(x) < 2 or len(x) != len(y):
                raise ValueError(f"series {name!r} needs at least two (x, y) points")
            keep = np.isfinite(x) & np.isfinite(y)
            if logx:
                keep &= x > 0
            if logy:
                keep &= y > 0
            ax.plot(x[keep], y[keep], marker="o", markersize=3, linewidth=1.2, label=str(name))
        if logx:
            ax.set_xscale("log", base=2)
        if logy:
            ax.set_yscale("log", base=10)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend(fontsize=8)
        fig.tight_layout()
        try:
            fig.savefig(filename, format="svg", metadata={"Date": None, "Creator": "stochlab"})
        except OSError as exc:
            raise OSError(f"cannot write {filename}: {exc}") from exc
        finally:
            plt.close(fig)
