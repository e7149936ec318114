"""SVG figures for plans, corridors and Hessian-similarity analyses.

Figures are built on bare ``matplotlib.figure.Figure`` objects so no GUI
backend is needed. SVG output is made reproducible by fixing the id salt
and dropping the date stamp.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure
from matplotlib.patches import Polygon
from scipy.cluster.hierarchy import dendrogram

from .bernstein import sample_bezier
from .planner import PipelineResult

SVG_SALT = "consensus-bezier"
SEGMENT_COLORS = ("tab:blue", "tab:green", "goldenrod", "tab:purple", "tab:orange", "tab:cyan")


def save_svg(fig: Figure, path) -> Path:
    path = Path(path)
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    return path


def _draw_map(ax, result: PipelineResult, heat: bool) -> None:
    grid = result.grid
    ext = grid.extent
    if heat:
        cost = result.field.dist.copy()
        cost[~np.isfinite(cost)] = np.nan
        ax.imshow(cost, origin="lower", extent=ext, cmap="viridis", alpha=0.55, interpolation="nearest")
    occ = np.ma.masked_where(~grid.occupancy, grid.occupancy.astype(float))
    ax.imshow(occ, origin="lower", extent=ext, cmap="gray_r", vmin=0, vmax=1, interpolation="nearest")
    ax.set_xlim(ext[0], ext[1])
    ax.set_ylim(ext[2], ext[3])
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")


def _draw_corridors(ax, result: PipelineResult) -> None:
    ext = result.grid.extent
    for i, S in enumerate(result.chain.corridors):
        poly = S.polygon(ext)
        if len(poly) >= 3:
            color = SEGMENT_COLORS[i % len(SEGMENT_COLORS)]
            ax.add_patch(Polygon(poly, closed=True, facecolor=color, edgecolor=color, alpha=0.15, lw=0.8))
        ax.plot(*S.center, marker="s", ms=3, color="darkred", ls="none")


def _draw_reference(ax, result: PipelineResult) -> None:
    ax.plot(result.polyline[:, 0], result.polyline[:, 1], color="red", lw=1.0, label="reference path")
    ax.plot(*result.polyline[0], marker="s", color="blue", ms=6, ls="none", label="start")
    ax.plot(*result.polyline[-1], marker="s", color="red", ms=6, ls="none", label="goal")


def plan_figure(result: PipelineResult, heat: bool = False, title: str | None = None) -> Figure:
    """Map, optional clearance shading, reference path, corridors, control polygons and curves."""
    fig = Figure(figsize=(8, 5.5))
    ax = fig.add_subplot()
    _draw_map(ax, result, heat)
    _draw_corridors(ax, result)
    _draw_reference(ax, result)
    if result.path is not None:
        ts = np.linspace(0.0, 1.0, 101)
        for i, P in enumerate(result.path.segments):
            color = SEGMENT_COLORS[i % len(SEGMENT_COLORS)]
            ax.plot(P[:, 0], P[:, 1], ls="--", marker="o", ms=2.5, lw=0.6, color=color, alpha=0.8)
            B = sample_bezier(P, ts)
            ax.plot(B[:, 0], B[:, 1], lw=2.0, color=color)
    if title:
        ax.set_title(title)
    ax.legend(loc="upper left", fontsize=7, framealpha=0.8)
    return fig


def corridor_figure(result: PipelineResult, heat: bool = True) -> Figure:
    fig = Figure(figsize=(8, 5.5))
    ax = fig.add_subplot()
    _draw_map(ax, result, heat)
    _draw_corridors(ax, result)
    _draw_reference(ax, result)
    ax.set_title(f"{len(result.chain)} safe corridors")
    return fig


def similarity_figure(dendro, title: str | None = None) -> Figure:
    """Pairwise distance heat map next to its complete-linkage dendrogram."""
    fig = Figure(figsize=(9, 4))
    ax_h, ax_d = fig.subplots(1, 2)
    D = dendro.distances
    labels = list(dendro.labels)
    im = ax_h.imshow(D, cmap="magma_r", vmin=0.0, vmax=max(float(D.max()), 1e-12))
    ax_h.set_xticks(range(len(labels)), labels)
    ax_h.set_yticks(range(len(labels)), labels)
    for i in range(len(labels)):
        for j in range(len(labels)):
            ax_h.text(j, i, f"{D[i, j]:.2f}", ha="center", va="center", fontsize=7,
                      color="white" if D[i, j] > 0.6 * D.max() else "black")  # fmt: skip
    fig.colorbar(im, ax=ax_h, fraction=0.046, pad=0.04)
    dendrogram(dendro.linkage_matrix(), labels=labels, ax=ax_d, color_threshold=0, above_threshold_color="k")
    ax_d.set_ylabel("complete-linkage distance")
    if title:
        fig.suptitle(title)
    return fig
