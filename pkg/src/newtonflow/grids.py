"""Regular rectangular grids, axis-aligned working domains, cell densities."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

#: Hard cap on total cell count; guards against accidental huge allocations.
DEFAULT_CELL_BUDGET = 20_000_000


@dataclass(frozen=True)
class WorkingDomain:
    """Axis-aligned box in which fields are expected to be evaluable."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape:
            raise ValueError("lower and upper must have the same shape")
        if not np.all(upper > lower):
            raise ValueError("upper must exceed lower componentwise")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask: which of the given points (..., p) lie in the box."""
        pts = np.asarray(points, dtype=float)
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=-1)


@dataclass(frozen=True)
class GridSpec:
    """Regular lattice: per-axis lower edge, cell width and cell count.

    Cell centers along axis k sit at lower[k] + (i + 1/2) * dx[k] for
    i = 0 .. cells[k]-1; faces at lower[k] + i * dx[k].
    """

    lower: np.ndarray
    dx: np.ndarray
    cells: tuple[int, ...]
    budget: int = field(default=DEFAULT_CELL_BUDGET, repr=False)

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        dx = np.atleast_1d(np.asarray(self.dx, dtype=float))
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        if dx.size == 1 and lower.size > 1:
            dx = np.full(lower.size, dx[0])
        if not (lower.size == dx.size == len(cells)):
            raise ValueError("lower, dx and cells must agree in dimension")
        if np.any(dx <= 0):
            raise ValueError("cell widths must be positive")
        if any(c < 3 for c in cells):
            raise ValueError("need at least 3 cells per axis")
        total = int(np.prod(cells))
        if total > self.budget:
            raise ValueError(f"grid has {total} cells, over the budget {self.budget}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "cells", cells)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def upper(self) -> np.ndarray:
        return self.lower + self.dx * np.asarray(self.cells)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    def axis_centers(self, k: int) -> np.ndarray:
        return self.lower[k] + (np.arange(self.cells[k]) + 0.5) * self.dx[k]

    def axis_faces(self, k: int) -> np.ndarray:
        return self.lower[k] + np.arange(self.cells[k] + 1) * self.dx[k]

    def centers(self) -> np.ndarray:
        """All cell centers, shape cells + (p,)."""
        axes = [self.axis_centers(k) for k in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def face_points(self, axis: int) -> np.ndarray:
        """Face midpoints for faces orthogonal to `axis`.

        Shape is cells with cells[axis] + 1 along `axis`, trailing (p,).
        """
        axes = [
            self.axis_faces(k) if k == axis else self.axis_centers(k)
            for k in range(self.dim)
        ]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def as_domain(self) -> WorkingDomain:
        return WorkingDomain(self.lower, self.upper)

    def same_layout(self, other: "GridSpec") -> bool:
        return (
            self.cells == other.cells
            and np.allclose(self.lower, other.lower, rtol=0, atol=1e-12)
            and np.allclose(self.dx, other.dx, rtol=0, atol=1e-15)
        )


@dataclass
class DensityField:
    """Nonnegative cell-centered density on a grid at a time stamp."""

    grid: GridSpec
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != tuple(self.grid.cells):
            raise ValueError(
                f"values shape {values.shape} does not match grid {self.grid.cells}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite")
        self.values = values
        self.time = float(self.time)

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def normalized(self) -> "DensityField":
        """Copy rescaled to unit mass."""
        m = self.mass()
        if m <= 0:
            raise ValueError("cannot normalize a density with non-positive mass")
        return DensityField(self.grid, self.values / m, self.time)


def save_density(density: DensityField, path: str | Path) -> Path:
    """Write a density snapshot: plain-text header, then row-major values."""
    path = Path(path)
    g = density.grid
    lines = [
        f"p={g.dim}",
        "lower=" + ",".join(f"{v:.17g}" for v in g.lower),
        "dx=" + ",".join(f"{v:.17g}" for v in g.dx),
        "cells=" + ",".join(str(c) for c in g.cells),
        f"time={density.time:.17g}",
    ]
    lines.extend(f"{v:.17g}" for v in density.values.ravel(order="C"))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return path


def load_density(path: str | Path) -> DensityField:
    """Read a density snapshot written by :func:`save_density`."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    header = {}
    for line in text[:5]:
        key, _, raw = line.partition("=")
        header[key.strip()] = raw.strip()
    p = int(header["p"])
    lower = np.array([float(v) for v in header["lower"].split(",")])
    dx = np.array([float(v) for v in header["dx"].split(",")])
    cells = tuple(int(v) for v in header["cells"].split(","))
    time = float(header["time"])
    if lower.size != p or len(cells) != p:
        raise ValueError(f"inconsistent header in {path}")
    values = np.array([float(v) for v in text[5:] if v.strip()])
    grid = GridSpec(lower, dx, cells)
    return DensityField(grid, values.reshape(cells, order="C"), time)
