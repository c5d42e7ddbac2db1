"""Figure rendering for run artifacts.

Every plot function takes already-computed objects and writes a PNG next
to the delimited output; nothing here feeds back into the numerics. The
Agg backend is forced so rendering works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .grids import DensityField  # noqa: E402


def plot_density(rho: DensityField, path: str | Path,
                 axes: tuple[int, int] = (0, 1),
                 fixed: dict[int, int] | None = None) -> Path:
    """Render a density snapshot: a line for 1-D, a section heatmap otherwise.

    For three or more dimensions the non-plotted axes are sliced at the
    cell nearest the density mean, matching the section CSV export.
    """
    path = Path(path)
    g = rho.grid
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    if g.dim == 1:
        ax.plot(g.axis_centers(0), rho.values, lw=1.5)
        ax.set_xlabel("x1")
        ax.set_ylabel("density")
    else:
        from .transport import _mean_and_cov

        i, j = axes
        index: list = [slice(None)] * g.dim
        _, mean, _ = _mean_and_cov(rho.values, g)
        for k in range(g.dim):
            if k in (i, j):
                continue
            if fixed is not None and k in fixed:
                index[k] = int(fixed[k])
            else:
                index[k] = int(np.clip(round((mean[k] - g.lower[k]) / g.dx[k] - 0.5),
                                       0, g.cells[k] - 1))
        plane = rho.values[tuple(index)]
        if i > j:
            plane = plane.T
        extent = (g.axis_faces(j)[0], g.axis_faces(j)[-1],
                  g.axis_faces(i)[0], g.axis_faces(i)[-1])
        im = ax.imshow(plane, origin="lower", extent=extent, aspect="auto",
                       cmap="viridis")
        fig.colorbar(im, ax=ax, label="density")
        ax.set_xlabel(f"x{j + 1}")
        ax.set_ylabel(f"x{i + 1}")
    ax.set_title(f"t = {rho.time:g}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_moments(reports, path: str | Path) -> Path:
    """Mean components, mass/outflow and the momenta functional over time."""
    path = Path(path)
    reports = sorted(reports, key=lambda r: r.time)
    times = [r.time for r in reports]
    dim = len(reports[0].mean)
    fig, axes = plt.subplots(1, 3, figsize=(11.0, 3.4))
    for k in range(dim):
        axes[0].plot(times, [r.mean[k] for r in reports], marker="o",
                     label=f"mean x{k + 1}")
    axes[0].set_xlabel("t")
    axes[0].legend(fontsize=8)
    axes[0].set_title("mean")
    axes[1].plot(times, [r.mass for r in reports], marker="o", label="mass")
    axes[1].plot(times, [r.outflow for r in reports], marker="s",
                 label="outflow")
    axes[1].set_xlabel("t")
    axes[1].legend(fontsize=8)
    axes[1].set_title("mass budget")
    axes[2].plot(times, [r.momenta for r in reports], marker="o")
    axes[2].set_xlabel("t")
    axes[2].set_title("momenta E(t)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_comparisons(reports, path: str | Path) -> Path:
    """L1 distance between the two descriptions across snapshots."""
    path = Path(path)
    reports = sorted(reports, key=lambda r: r.time)
    times = [r.time for r in reports]
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot(times, [r.l1_distance for r in reports], marker="o", label="L1")
    if any(r.escaped_fraction is not None for r in reports):
        ax.plot(times, [r.escaped_fraction for r in reports], marker="s",
                label="escaped fraction")
        ax.plot(times, [r.outflow_fraction for r in reports], marker="^",
                label="outflow fraction")
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    ax.set_title("particle vs density agreement")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
