"""Drift potentials beta for the perturbed equation and particles.

A potential must have a vanishing gradient on the whole boundary. Analytic
potentials are checked on boundary sample points; sampled potentials get
zero boundary face gradients by construction.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import numpy.typing as npt

from . import grid as g
from .errors import InputError
from .nonlinearity import Nonlinearity

Array = npt.NDArray[np.float64]

BOUNDARY_TOL = 1e-10


class Potential(ABC):
    label: str

    @abstractmethod
    def cell_values(self, grid: g.Grid) -> Array: ...

    @abstractmethod
    def cell_gradient(self, grid: g.Grid) -> Array:
        """Gradient at cell centres, shape (dim, *grid.shape)."""

    @abstractmethod
    def face_gradient(self, grid: g.Grid, axis: int) -> Array:
        """Component `axis` of the gradient on the faces normal to `axis`."""

    @abstractmethod
    def laplacian(self, grid: g.Grid) -> Array: ...

    @abstractmethod
    def gradient_at(self, points: Array) -> Array:
        """Gradient at particle positions, shape (n, dim)."""

    @abstractmethod
    def boundary_violation(self, grid: g.Grid) -> float: ...

    def validate(self, grid: g.Grid, tol: float = BOUNDARY_TOL) -> None:
        violation = self.boundary_violation(grid)
        if violation > tol:
            raise InputError(
                f"potential {self.label!r} has gradient {violation:.3g} on the boundary (limit {tol:g})"
            )

    def max_face_gradient(self, grid: g.Grid) -> float:
        return max(float(np.max(np.abs(self.face_gradient(grid, a)))) for a in range(grid.dim))


def _boundary_points(grid: g.Grid, samples: int = 65) -> Array:
    if grid.dim == 1:
        return np.array([[grid.extent[0][0]], [grid.extent[0][1]]])
    chunks = []
    for axis in range(grid.dim):
        other = 1 - axis
        lo, hi = grid.extent[other]
        along = np.linspace(lo, hi, samples)
        for side in grid.extent[axis]:
            pts = np.empty((samples, 2))
            pts[:, axis] = side
            pts[:, other] = along
            chunks.append(pts)
    return np.concatenate(chunks)


@dataclass(frozen=True)
class PerturbationPotential(Potential):
    """Analytic potential given by callables of the coordinates.

    `grad(*x)` returns shape (dim, ...) and `hess(*x)` shape (dim, dim, ...).
    """

    value: Callable[..., Array]
    grad: Callable[..., Array]
    hess: Callable[..., Array]
    label: str = "custom"

    def cell_values(self, grid: g.Grid) -> Array:
        return grid.sample(self.value)

    def cell_gradient(self, grid: g.Grid) -> Array:
        mesh = grid.mesh()
        return np.stack([np.broadcast_to(c, grid.shape) for c in self.grad(*mesh)])

    def face_gradient(self, grid: g.Grid, axis: int) -> Array:
        coords = g.face_coordinates(grid, axis)
        out = np.array(np.broadcast_to(self.grad(*coords)[axis], coords[0].shape), dtype=np.float64)
        # boundary faces carry no flux
        index = [slice(None)] * grid.dim
        for end in (0, -1):
            index[axis] = end
            out[tuple(index)] = 0.0
        return out

    def laplacian(self, grid: g.Grid) -> Array:
        hess = self.hess(*grid.mesh())
        return np.broadcast_to(sum(hess[a][a] for a in range(grid.dim)), grid.shape).copy()

    def gradient_at(self, points: Array) -> Array:
        points = np.atleast_2d(points)
        grad = self.grad(*points.T)
        return np.stack([np.broadcast_to(c, points.shape[:1]) for c in grad], axis=-1)

    def boundary_violation(self, grid: g.Grid) -> float:
        pts = _boundary_points(grid)
        return float(np.max(np.abs(self.gradient_at(pts))))


@dataclass(frozen=True)
class SampledPotential(Potential):
    """Potential known only through its cell-centre samples on one grid."""

    grid: g.Grid
    values: Array = field(repr=False)
    label: str = "sampled"

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.shape != self.grid.shape:
            raise InputError("sampled potential does not match its grid")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def collinear(cls, p: g.DensityField, nl: Nonlinearity, scale: float) -> "SampledPotential":
        """beta = scale * h(p), so grad beta = scale * grad h(p)."""
        return cls(grid=p.grid, values=scale * nl.h(p.values), label=f"collinear({scale:g})")

    def _same_grid(self, grid: g.Grid) -> None:
        if grid != self.grid:
            raise InputError("sampled potential evaluated on a foreign grid")

    def cell_values(self, grid: g.Grid) -> Array:
        self._same_grid(grid)
        return np.array(self.values)

    def cell_gradient(self, grid: g.Grid) -> Array:
        self._same_grid(grid)
        return g.gradient_neumann(self.values, grid)

    def face_gradient(self, grid: g.Grid, axis: int) -> Array:
        self._same_grid(grid)
        return g.face_gradient(self.values, grid, axis)

    def laplacian(self, grid: g.Grid) -> Array:
        self._same_grid(grid)
        return g.laplacian_neumann(self.values, grid)

    def gradient_at(self, points: Array) -> Array:
        grad = self.cell_gradient(self.grid)
        return np.stack(
            [g.interpolate_values(grad[a], self.grid, points) for a in range(self.grid.dim)],
            axis=-1,
        )

    def boundary_violation(self, grid: g.Grid) -> float:
        self._same_grid(grid)
        worst = 0.0
        for axis in range(grid.dim):
            faces = self.face_gradient(grid, axis)
            index = [slice(None)] * grid.dim
            for end in (0, -1):
                index[axis] = end
                worst = max(worst, float(np.max(np.abs(faces[tuple(index)]))))
        return worst


def zero_potential(dim: int = 1) -> PerturbationPotential:
    def value(*x: Array) -> Array:
        return np.zeros(np.shape(x[0]))

    def grad(*x: Array) -> Array:
        return np.zeros((dim, *np.shape(x[0])))

    def hess(*x: Array) -> Array:
        return np.zeros((dim, dim, *np.shape(x[0])))

    return PerturbationPotential(value=value, grad=grad, hess=hess, label="zero")


def cosine_potential(grid: g.Grid, amplitude: float, k: float) -> PerturbationPotential:
    """amplitude * cos(k pi s0), s the coordinates rescaled to [0, 1].

    On a rectangle the profile is multiplied by sin^2(pi s0) sin^2(pi s1) so
    that the full gradient vanishes on every side.
    """
    (lo0, hi0) = grid.extent[0]
    w0 = np.pi / (hi0 - lo0)
    a = float(amplitude)
    label = f"{a:g}cos({k:g}pi x)"

    if grid.dim == 1:

        def value(x: Array) -> Array:
            return a * np.cos(k * w0 * (x - lo0))

        def grad(x: Array) -> Array:
            return np.stack([-a * k * w0 * np.sin(k * w0 * (x - lo0))])

        def hess(x: Array) -> Array:
            return np.stack([np.stack([-a * (k * w0) ** 2 * np.cos(k * w0 * (x - lo0))])])

        return PerturbationPotential(value=value, grad=grad, hess=hess, label=label)

    (lo1, hi1) = grid.extent[1]
    w1 = np.pi / (hi1 - lo1)

    def parts(x: Array, y: Array) -> tuple[Array, ...]:
        s, t = w0 * (x - lo0), w1 * (y - lo1)
        c, dc, ddc = np.cos(k * s), -k * w0 * np.sin(k * s), -((k * w0) ** 2) * np.cos(k * s)
        sx, dsx, ddsx = np.sin(s) ** 2, w0 * np.sin(2 * s), 2 * w0**2 * np.cos(2 * s)
        sy, dsy, ddsy = np.sin(t) ** 2, w1 * np.sin(2 * t), 2 * w1**2 * np.cos(2 * t)
        return c, dc, ddc, sx, dsx, ddsx, sy, dsy, ddsy

    def value2(x: Array, y: Array) -> Array:
        c, _, _, sx, _, _, sy, _, _ = parts(x, y)
        return a * c * sx * sy

    def grad2(x: Array, y: Array) -> Array:
        c, dc, _, sx, dsx, _, sy, dsy, _ = parts(x, y)
        return np.stack([a * sy * (dc * sx + c * dsx), a * c * sx * dsy])

    def hess2(x: Array, y: Array) -> Array:
        c, dc, ddc, sx, dsx, ddsx, sy, dsy, ddsy = parts(x, y)
        xx = a * sy * (ddc * sx + 2 * dc * dsx + c * ddsx)
        xy = a * dsy * (dc * sx + c * dsx)
        yy = a * c * sx * ddsy
        return np.stack([np.stack([xx, xy]), np.stack([xy, yy])])

    return PerturbationPotential(value=value2, grad=grad2, hess=hess2, label=label)
