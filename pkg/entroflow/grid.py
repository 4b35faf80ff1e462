"""Uniform cell-centred grids on an interval or a rectangle with no-flux boundaries.

Cell values live at centres, fluxes on faces. Boundary faces always carry
zero flux, so every flux-difference operator here conserves mass exactly
in exact arithmetic.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import numpy.typing as npt
import pandas as pd
from scipy.interpolate import RegularGridInterpolator

from .errors import DomainError, InputError

Array = npt.NDArray[np.float64]

# Relative slack when deciding whether a point sits on the closed domain.
BOUNDARY_SLACK = 1e-12


@dataclass(frozen=True)
class Grid:
    extent: tuple[tuple[float, float], ...]
    n_cells: tuple[int, ...]

    def __post_init__(self) -> None:
        extent = tuple((float(lo), float(hi)) for lo, hi in self.extent)
        n_cells = tuple(int(n) for n in self.n_cells)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "n_cells", n_cells)
        if len(extent) not in (1, 2) or len(extent) != len(n_cells):
            raise InputError(f"grid must be 1-D or 2-D, got extent={extent} n_cells={n_cells}")
        for lo, hi in extent:
            if not hi > lo:
                raise InputError(f"grid axis [{lo}, {hi}] is empty")
        if min(n_cells) < 4:
            raise InputError(f"at least 4 cells per axis are needed, got {n_cells}")

    @classmethod
    def interval(cls, lo: float, hi: float, n: int) -> "Grid":
        return cls(extent=((lo, hi),), n_cells=(n,))

    @classmethod
    def rectangle(cls, extent: Sequence[Sequence[float]], n_cells: Sequence[int]) -> "Grid":
        return cls(extent=tuple(tuple(e) for e in extent), n_cells=tuple(n_cells))

    def to_dict(self) -> dict[str, Any]:
        return {"extent": [list(e) for e in self.extent], "n_cells": list(self.n_cells)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Grid":
        try:
            return cls.rectangle(data["extent"], data["n_cells"])
        except (KeyError, TypeError) as exc:
            raise InputError(f"bad grid header: {exc}") from exc

    @property
    def dim(self) -> int:
        return len(self.n_cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n_cells

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple((hi - lo) / n for (lo, hi), n in zip(self.extent, self.n_cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    @property
    def lower(self) -> Array:
        return np.array([lo for lo, _ in self.extent])

    @property
    def upper(self) -> Array:
        return np.array([hi for _, hi in self.extent])

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def centers(self, axis: int = 0) -> Array:
        lo, _ = self.extent[axis]
        return lo + (np.arange(self.n_cells[axis]) + 0.5) * self.dx[axis]

    def faces(self, axis: int = 0) -> Array:
        lo, _ = self.extent[axis]
        return lo + np.arange(self.n_cells[axis] + 1) * self.dx[axis]

    def mesh(self) -> tuple[Array, ...]:
        return tuple(np.meshgrid(*(self.centers(a) for a in range(self.dim)), indexing="ij"))

    def sample(self, func: Callable[..., Array]) -> Array:
        """Evaluates func(x0[, x1]) at every cell centre."""
        return np.broadcast_to(np.asarray(func(*self.mesh()), dtype=np.float64), self.shape).copy()

    def check_inside(self, points: Array) -> None:
        slack = BOUNDARY_SLACK * (self.upper - self.lower)
        if np.any(points < self.lower - slack) or np.any(points > self.upper + slack):
            raise DomainError("point outside the closed domain")


@dataclass(frozen=True)
class DensityField:
    grid: Grid
    values: Array = field(repr=False)
    time_tag: float = 0.0

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.shape != self.grid.shape:
            raise InputError(f"values shape {values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise InputError("density values must be finite and nonnegative")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "time_tag", float(self.time_tag))

    @classmethod
    def from_function(cls, grid: Grid, func: Callable[..., Array], time_tag: float = 0.0) -> "DensityField":
        return cls(grid=grid, values=grid.sample(func), time_tag=time_tag)

    @classmethod
    def uniform(cls, grid: Grid, time_tag: float = 0.0) -> "DensityField":
        return cls(grid=grid, values=np.full(grid.shape, 1.0 / grid.volume), time_tag=time_tag)

    def with_values(self, values: Array, time_tag: float | None = None) -> "DensityField":
        return DensityField(
            grid=self.grid,
            values=values,
            time_tag=self.time_tag if time_tag is None else time_tag,
        )

    @property
    def mass(self) -> float:
        return integrate(self.values, self.grid)

    @property
    def min(self) -> float:
        return float(np.min(self.values))

    @property
    def max(self) -> float:
        return float(np.max(self.values))

    def to_frame(self) -> pd.DataFrame:
        columns = {f"x{a}": c.ravel() for a, c in enumerate(self.grid.mesh())}
        columns["value"] = self.values.ravel()
        return pd.DataFrame(columns)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, grid: Grid, time_tag: float = 0.0) -> "DensityField":
        """Reads cell-centre samples; rows may come in any order."""
        axes = [f"x{a}" for a in range(grid.dim)]
        missing = [c for c in [*axes, "value"] if c not in frame.columns]
        if missing:
            raise InputError(f"density table lacks columns {missing}")
        if len(frame) != int(np.prod(grid.shape)):
            raise InputError(f"density table has {len(frame)} rows, grid has {np.prod(grid.shape)} cells")
        index = []
        for a, column in enumerate(axes):
            position = (frame[column].to_numpy() - grid.extent[a][0]) / grid.dx[a] - 0.5
            rounded = np.rint(position)
            if np.max(np.abs(position - rounded)) > 1e-6:
                raise InputError(f"column {column} is not on the cell centres of the grid")
            index.append(rounded.astype(int))
        values = np.full(grid.shape, np.nan)
        values[tuple(index)] = frame["value"].to_numpy(dtype=np.float64)
        if np.isnan(values).any():
            raise InputError("density table does not cover every cell")
        return cls(grid=grid, values=values, time_tag=time_tag)

    def to_json(self) -> dict[str, Any]:
        """Grid header plus the values flattened in C order."""
        return {"grid": self.grid.to_dict(), "time_tag": self.time_tag, "values": self.values.ravel().tolist()}

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "DensityField":
        grid = Grid.from_dict(data.get("grid", {}))
        values = np.asarray(data.get("values", []), dtype=np.float64)
        if values.size != int(np.prod(grid.shape)):
            raise InputError(f"{values.size} values for a grid of {np.prod(grid.shape)} cells")
        return cls(grid=grid, values=values.reshape(grid.shape), time_tag=data.get("time_tag", 0.0))


def _values(field_or_values: DensityField | Array) -> Array:
    if isinstance(field_or_values, DensityField):
        return field_or_values.values
    return np.asarray(field_or_values, dtype=np.float64)


def _pad_axis(values: Array, axis: int, mode: str) -> Array:
    width = [(0, 0)] * values.ndim
    width[axis] = (1, 1)
    return np.pad(values, width, mode=mode)


def face_gradient(values: Array, grid: Grid, axis: int) -> Array:
    """Normal derivative on the faces of one axis; zero on boundary faces."""
    interior = np.diff(values, axis=axis) / grid.dx[axis]
    width = [(0, 0)] * values.ndim
    width[axis] = (1, 1)
    return np.pad(interior, width, mode="constant")


def face_average(values: Array, axis: int) -> Array:
    """Arithmetic mean on faces, boundary faces take the adjacent cell."""
    padded = _pad_axis(values, axis, "edge")
    lo = [slice(None)] * values.ndim
    hi = [slice(None)] * values.ndim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    return 0.5 * (padded[tuple(lo)] + padded[tuple(hi)])


def face_coordinates(grid: Grid, axis: int) -> tuple[Array, ...]:
    """Coordinates of the faces normal to `axis`, shaped like face arrays."""
    axes = [grid.faces(a) if a == axis else grid.centers(a) for a in range(grid.dim)]
    return tuple(np.meshgrid(*axes, indexing="ij"))


def flux_divergence(fluxes: Sequence[Array], grid: Grid) -> Array:
    """Cell divergence of per-axis face fluxes."""
    out = np.zeros(grid.shape)
    for axis, flux in enumerate(fluxes):
        out = out + np.diff(flux, axis=axis) / grid.dx[axis]
    return out


def gradient_neumann(field_or_values: DensityField | Array, grid: Grid | None = None) -> Array:
    """Centred-difference gradient, shape (dim, *grid.shape).

    Ghost cells mirror the neighbour across the boundary cell centre, so the
    normal component in boundary cells is zero.
    """
    if isinstance(field_or_values, DensityField):
        grid = field_or_values.grid
    if grid is None:
        raise InputError("gradient of raw samples needs a grid")
    values = _values(field_or_values)
    out = np.empty((grid.dim, *grid.shape))
    for axis in range(grid.dim):
        padded = _pad_axis(values, axis, "reflect")
        lo = [slice(None)] * values.ndim
        hi = [slice(None)] * values.ndim
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        out[axis] = (padded[tuple(hi)] - padded[tuple(lo)]) / (2.0 * grid.dx[axis])
    return out


def laplacian_neumann(field_or_values: DensityField | Array, grid: Grid | None = None) -> Array:
    """Three-point Laplacian with face-mirrored ghost cells (zero boundary flux)."""
    if isinstance(field_or_values, DensityField):
        grid = field_or_values.grid
    if grid is None:
        raise InputError("laplacian of raw samples needs a grid")
    values = _values(field_or_values)
    out = np.zeros(grid.shape)
    for axis in range(grid.dim):
        padded = _pad_axis(values, axis, "edge")
        lo = [slice(None)] * values.ndim
        mid = [slice(None)] * values.ndim
        hi = [slice(None)] * values.ndim
        lo[axis] = slice(0, -2)
        mid[axis] = slice(1, -1)
        hi[axis] = slice(2, None)
        out = out + (padded[tuple(hi)] - 2.0 * padded[tuple(mid)] + padded[tuple(lo)]) / grid.dx[axis] ** 2
    return out


def div_a_grad_b(a: Array, b: Array, grid: Grid) -> Array:
    """Conservative div(a grad b) with zero boundary flux."""
    return flux_divergence(
        [face_average(a, axis) * face_gradient(b, grid, axis) for axis in range(grid.dim)],
        grid,
    )


def integrate(field_or_values: DensityField | Array, grid: Grid | None = None) -> float:
    """Midpoint quadrature; numpy reduces contiguous arrays pairwise."""
    if isinstance(field_or_values, DensityField):
        grid = field_or_values.grid
    if grid is None:
        raise InputError("integrating raw samples needs a grid")
    return float(np.sum(_values(field_or_values)) * grid.cell_volume)


def _interpolator(values: Array, grid: Grid) -> RegularGridInterpolator:
    return RegularGridInterpolator(
        tuple(grid.centers(a) for a in range(grid.dim)),
        values,
        method="linear",
        bounds_error=False,
        fill_value=None,
    )


def interpolate_values(values: Array, grid: Grid, points: Array) -> Array:
    """Multilinear interpolation at points of shape (n, dim).

    Points in the half-cell band next to the boundary take the value of the
    nearest centre line (constant extrapolation).
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[-1] != grid.dim:
        raise InputError(f"points must have {grid.dim} coordinates")
    grid.check_inside(points)
    lo = np.array([grid.centers(a)[0] for a in range(grid.dim)])
    hi = np.array([grid.centers(a)[-1] for a in range(grid.dim)])
    return _interpolator(values, grid)(np.clip(points, lo, hi))


def interpolate(field: DensityField, x: Array | Sequence[float] | float) -> Array | float:
    x_arr = np.asarray(x, dtype=np.float64)
    if x_arr.ndim == 0 or (x_arr.ndim == 1 and field.grid.dim > 1):
        return float(interpolate_values(field.values, field.grid, x_arr.reshape(1, -1))[0])
    if x_arr.ndim == 1:
        x_arr = x_arr.reshape(-1, 1)
    return interpolate_values(field.values, field.grid, x_arr)


def write_field_csv(field: DensityField, path: Path | str) -> None:
    field.to_frame().to_csv(path, index=False, float_format="%.17g")


def read_field_csv(path: Path | str, grid: Grid, time_tag: float = 0.0) -> DensityField:
    return DensityField.from_frame(pd.read_csv(path), grid, time_tag)


def write_field_json(field: DensityField, path: Path | str) -> None:
    Path(path).write_text(json.dumps(field.to_json(), sort_keys=True) + "\n")


def read_field_json(path: Path | str) -> DensityField:
    return DensityField.from_json(json.loads(Path(path).read_text()))
