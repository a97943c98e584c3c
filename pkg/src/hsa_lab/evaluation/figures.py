"""SVG figures: accuracy heatmaps, accuracy-vs-length curves and cost curves."""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

import hsa_lab.file_io as lab_io
from hsa_lab.evaluation.cost_model import CostReport
from hsa_lab.evaluation.niah import AccuracyGrid

BOUNDARY_STYLE = {"color": "red", "linestyle": "--", "linewidth": 1.5}


def _new_figure(width=6.0, height=4.0) -> Figure:
    figure = Figure(figsize=(width, height))
    FigureCanvasAgg(figure)
    return figure


def save_svg(figure: Figure, path) -> str:
    """Write ``figure`` as SVG and return the path."""
    path = lab_io.get_upath(path)
    lab_io.make_directory(path.parent, exist_ok=True)
    with path.open("wb") as file_handle:
        figure.savefig(file_handle, format="svg", bbox_inches="tight")
    return str(path)


def heatmap_figure(grid: AccuracyGrid, title: str | None = None) -> Figure:
    """Depth (rows) by length (columns) accuracy, with the in-domain boundary dashed."""
    figure = _new_figure()
    axes = figure.add_subplot(1, 1, 1)
    values = np.ma.masked_invalid(grid.accuracy.T)
    image = axes.imshow(values, vmin=0.0, vmax=1.0, cmap="RdYlGn", aspect="auto", origin="upper")
    axes.set_xticks(range(len(grid.lengths)), [str(length) for length in grid.lengths], rotation=45)
    axes.set_yticks(range(len(grid.depths)), [f"{depth:g}" for depth in grid.depths])
    axes.set_xlabel("context length (tokens)")
    axes.set_ylabel("needle depth")
    for column, length in enumerate(grid.lengths):
        for row, depth in enumerate(grid.depths):
            if (length, depth) in grid.skipped:
                axes.text(column, row, "skip", ha="center", va="center", fontsize=7)
    if grid.in_domain_boundary is not None:
        in_domain = [length for length in grid.lengths if length <= grid.in_domain_boundary]
        if 0 < len(in_domain) < len(grid.lengths):
            axes.axvline(len(in_domain) - 0.5, **BOUNDARY_STYLE)
    figure.colorbar(image, ax=axes, label="accuracy")
    axes.set_title(title or f"{grid.task} accuracy")
    return figure


def length_curve_figure(
    grids: dict[str, AccuracyGrid], boundary: int | None = None, title: str = ""
) -> Figure:
    """Depth-averaged accuracy against length, one line per labelled grid."""
    figure = _new_figure()
    axes = figure.add_subplot(1, 1, 1)
    for label, grid in grids.items():
        means = grid.mean_by_length()
        axes.plot(means.index, means.values, marker="o", label=label)
        if boundary is None:
            boundary = grid.in_domain_boundary
    if boundary is not None:
        axes.axvline(boundary, label="training context", **BOUNDARY_STYLE)
    axes.set_xscale("log", base=2)
    axes.set_ylim(-0.02, 1.02)
    axes.set_xlabel("context length (tokens)")
    axes.set_ylabel("accuracy")
    axes.grid(True, alpha=0.3)
    axes.legend()
    if title:
        axes.set_title(title)
    return figure


def cost_figure(report: CostReport) -> Figure:
    """FLOPs of full attention against the hybrid, log-log, with the crossover marked."""
    frame = report.to_frame()
    figure = _new_figure()
    axes = figure.add_subplot(1, 1, 1)
    axes.plot(frame["length"], frame["full_flops"], marker="o", label="full attention")
    axes.plot(frame["length"], frame["hsa_total_flops"], marker="o", label="SWA + HSA")
    axes.plot(frame["length"], frame["hsa_attend_flops"], linestyle=":", label="HSA attend only")
    if report.crossover is not None:
        axes.axvline(report.crossover, color="gray", linestyle="--", label=f"crossover {report.crossover}")
    axes.set_xscale("log", base=2)
    axes.set_yscale("log")
    axes.set_xlabel("context length (tokens)")
    axes.set_ylabel("attention FLOPs")
    axes.grid(True, alpha=0.3)
    axes.legend()
    return figure
