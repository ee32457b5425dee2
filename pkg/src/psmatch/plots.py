"""Figure output: static SVG love plot and matplotlib PNG figures."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

BEFORE_COLOR = "#1f77b4"
AFTER_COLOR = "#ff7f0e"
THRESHOLD_COLOR = "#d62728"


def loveplot_svg(rows: list[dict], threshold: float = 0.1) -> str:
    """Dots for signed SMD before (hollow) and after (filled) matching per covariate.

    ``rows`` carry ``covariate``, ``smd_before`` and ``smd_after`` (``None``
    when the after-panel is empty). Dotted red lines mark +/- threshold.
    """
    left, right, top, row_h = 120, 40, 40, 22
    width = 520
    plot_w = width - left - right
    height = top + row_h * len(rows) + 50
    values = [abs(v) for r in rows for v in (r["smd_before"], r["smd_after"]) if v is not None]
    lim = max([threshold * 1.5] + values) * 1.1
    x = lambda v: left + (v + lim) / (2 * lim) * plot_w
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="13">'
        'Standardized mean difference</text>',
    ]
    bottom = top + row_h * len(rows)
    out.append(f'<line x1="{x(0):.2f}" y1="{top}" x2="{x(0):.2f}" y2="{bottom}" stroke="#888"/>')
    for t in (-threshold, threshold):
        out.append(f'<line x1="{x(t):.2f}" y1="{top}" x2="{x(t):.2f}" y2="{bottom}" '
                   f'stroke="{THRESHOLD_COLOR}" stroke-dasharray="2,3"/>')
    for i, r in enumerate(rows):
        cy = top + row_h * (i + 0.5)
        out.append(f'<text x="{left - 8}" y="{cy + 4:.1f}" text-anchor="end">{escape(r["covariate"])}</text>')
        out.append(f'<line x1="{left}" y1="{cy:.1f}" x2="{left + plot_w}" y2="{cy:.1f}" stroke="#eee"/>')
        if r["smd_before"] is not None:
            out.append(f'<circle cx="{x(r["smd_before"]):.2f}" cy="{cy:.1f}" r="4" '
                       f'fill="none" stroke="{BEFORE_COLOR}" stroke-width="1.5"/>')
        if r["smd_after"] is not None:
            out.append(f'<circle cx="{x(r["smd_after"]):.2f}" cy="{cy:.1f}" r="4" fill="{AFTER_COLOR}"/>')
    for tick in (-lim / 1.1, -threshold, 0.0, threshold, lim / 1.1):
        out.append(f'<text x="{x(tick):.2f}" y="{bottom + 16}" text-anchor="middle">{tick:.2f}</text>')
    ly = bottom + 36
    out.append(f'<circle cx="{left + 10}" cy="{ly}" r="4" fill="none" stroke="{BEFORE_COLOR}" stroke-width="1.5"/>')
    out.append(f'<text x="{left + 20}" y="{ly + 4}">before matching</text>')
    out.append(f'<circle cx="{left + 140}" cy="{ly}" r="4" fill="{AFTER_COLOR}"/>')
    out.append(f'<text x="{left + 150}" y="{ly + 4}">after matching</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _figure(width: float = 7.0, height: float | None = None):
    golden_ratio = (math.sqrt(5) - 1.0) / 2.0
    if height is None:
        height = width * golden_ratio
    return plt.figure(figsize=(width, height), facecolor="w")


def render_loveplot(rows: list[dict], threshold: float, path) -> None:
    fig = _figure(6.5, 0.35 * len(rows) + 1.5)
    ax = fig.add_subplot(111)
    ys = list(range(len(rows)))[::-1]
    ax.scatter([r["smd_before"] for r in rows], ys, facecolors="none",
               edgecolors=BEFORE_COLOR, label="Before matching")
    after = [(r["smd_after"], y) for r, y in zip(rows, ys) if r["smd_after"] is not None]
    if after:
        ax.scatter([a for a, _ in after], [y for _, y in after], color=AFTER_COLOR, label="After matching")
    for t in (-threshold, threshold):
        ax.axvline(t, color=THRESHOLD_COLOR, linestyle=":")
    ax.axvline(0, color="0.6", linewidth=0.8)
    ax.set_yticks(ys)
    ax.set_yticklabels([r["covariate"] for r in rows])
    ax.set_xlabel("Standardized mean difference")
    ax.legend(loc="best", frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_ps_histograms(histograms: dict, path, labels=("Treated", "Control")) -> None:
    """Two panels (before / after matching) of score counts per group."""
    bins = histograms["bins"]
    edges = [i / bins for i in range(bins + 1)]
    fig = _figure(10, 4)
    for k, panel in enumerate(("before", "after")):
        ax = fig.add_subplot(1, 2, k + 1)
        for group, label, color in (("treated", labels[0], BEFORE_COLOR), ("control", labels[1], AFTER_COLOR)):
            counts = histograms["counts"][f"{group}/{panel}"]
            ax.stairs(counts, edges, label=label, color=color, fill=True, alpha=0.45)
        ax.set_title(f"{panel.capitalize()} matching")
        ax.set_xlabel("Propensity score")
        ax.set_xlim(0, 1)
        if k == 0:
            ax.set_ylabel("Count")
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
