"""Matplotlib rendering for the report path.

One figure per (measure, term): grouped bars of the performance table by
mechanism and method, written as PNG files next to the tidy CSV exports.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

METHOD_COLORS = {
    "passive": "#4C72B0",
    "jav": "#DD8452",
    "sia": "#55A868",
    "smcfcs": "#C44E52",
    "complete_case": "#8172B3",
}

TERM_LABELS = {
    "x:z5": "interaction",
    "x": "partially_observed",
    "z5": "fully_observed",
}

MEASURES = {
    "relative_bias": ("relative_bias_pct", "Relative bias (%)"),
    "coverage": ("coverage_pct", "Coverage of 95% CIs (%)"),
    "relative_error": ("relative_error_pct", "Relative error of ModSE (%)"),
}

MC_BAND = (93.6, 96.4)


def figure_filename(measure, term):
    return f"figure_{measure}_{TERM_LABELS[term]}.png"


def render_figure(rows, measure, term, path):
    """Grouped bar chart of one measure for one term across mechanisms."""
    attr, ylabel = MEASURES[measure]
    rows = [r for r in rows if r.term == term and getattr(r, attr) is not None]
    if not rows:
        return False
    dgms = sorted({r.dgm for r in rows}, key=str)
    methods = [m for m in METHOD_COLORS if any(r.method == m for r in rows)]
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for k, method in enumerate(methods):
        xs, ys = [], []
        for i, dgm in enumerate(dgms):
            cell = [r for r in rows if r.dgm == dgm and r.method == method]
            if cell:
                xs.append(i + (k - (len(methods) - 1) / 2) * width)
                ys.append(getattr(cell[0], attr))
        ax.bar(xs, ys, width=width, label=method, color=METHOD_COLORS[method])
    if measure == "coverage":
        for y in MC_BAND:
            ax.axhline(y, color="grey", linewidth=0.8, linestyle="--")
        ax.axhline(95.0, color="grey", linewidth=0.8, linestyle=":")
    else:
        ax.axhline(0.0, color="grey", linewidth=0.8)
    ax.set_xticks(range(len(dgms)))
    ax.set_xticklabels([f"DGM {d}" if d != "null" else "null" for d in dgms])
    ax.set_ylabel(ylabel)
    ax.set_title(f"{ylabel}: {TERM_LABELS[term].replace('_', ' ')} term")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def render_all(rows, outdir):
    """Write every available (measure, term) figure; returns written names."""
    written = []
    for measure in MEASURES:
        for term in TERM_LABELS:
            name = figure_filename(measure, term)
            if render_figure(rows, measure, term, outdir / name):
                written.append(name)
    return written
