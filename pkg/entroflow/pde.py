"""Explicit finite-volume solver for dp = div(grad f(p) + p grad beta) with no-flux walls.

The drift term p grad beta is not purely upwind: faces with cell Peclet
number up to PECLET_LIMIT take the centred value of p, the rest the upwind
one. Both keep the update monotone. The centred faces hold p ~ exp(-beta)
stationary to O(dx^2) for the linear kind; pure upwind gives only O(dx).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import numpy.typing as npt

from .errors import BoundsError, InputError, StabilityError, StepSizeError
from .grid import DensityField, Grid, face_gradient, flux_divergence, integrate
from .nonlinearity import Nonlinearity
from .potential import Potential

log = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]

SAFETY_FACTOR = 0.45
COMPARISON_SLACK = 1e-10
# Cell Peclet number up to which the drift flux uses the centred face value.
PECLET_LIMIT = 2.0


def cfl_dt(p: DensityField, nl: Nonlinearity, safety_factor: float = SAFETY_FACTOR) -> float:
    """safety * dx^2 / (2 d max f'(p))."""
    return _diffusive_dt(p.grid, float(np.max(nl.fprime(p.values))), safety_factor)


def _diffusive_dt(grid: Grid, max_fprime: float, safety_factor: float) -> float:
    return safety_factor * min(grid.dx) ** 2 / (2 * grid.dim * max_fprime)


def drift_dt(grid: Grid, beta: Potential) -> float:
    """dx / (2 max|grad beta|) over the faces of every axis; inf for a flat potential."""
    limits = []
    for axis in range(grid.dim):
        top = float(np.max(np.abs(beta.face_gradient(grid, axis))))
        limits.append(math.inf if top == 0 else grid.dx[axis] / (2 * top))
    return min(limits)


def perturbed_window(p0: DensityField) -> tuple[float, float]:
    """[1/(2k), k + 1/(2k)] with k = max(max p0, 1/min p0)."""
    kappa = max(p0.max, 1.0 / p0.min)
    return 1.0 / (2 * kappa), kappa + 1.0 / (2 * kappa)


def _drift_flux(values: Array, nl: Nonlinearity, beta_faces: Array, grid: Grid, axis: int) -> Array:
    """Face value of p grad beta.

    Centred where the cell Peclet number |grad beta| dx / f'(p) is at most
    PECLET_LIMIT, upwind (along the transport velocity -grad beta) elsewhere.
    """
    width = [(0, 0)] * values.ndim
    width[axis] = (1, 1)
    padded = np.pad(values, width, mode="edge")
    lo = [slice(None)] * values.ndim
    hi = [slice(None)] * values.ndim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    left, right = padded[tuple(lo)], padded[tuple(hi)]
    centred = 0.5 * (left + right)
    upwind = np.where(beta_faces < 0, left, right)
    peclet = np.abs(beta_faces) * grid.dx[axis] / nl.fprime(centred)
    return np.where(peclet <= PECLET_LIMIT, centred, upwind) * beta_faces


def total_fluxes(
    values: Array, nl: Nonlinearity, grid: Grid, beta_faces: Sequence[Array] | None = None
) -> list[Array]:
    """Face fluxes grad f(p) (+ p grad beta), zero on boundary faces."""
    fp = nl.f(values)
    fluxes = []
    for axis in range(grid.dim):
        flux = face_gradient(fp, grid, axis)
        if beta_faces is not None:
            flux = flux + _drift_flux(values, nl, beta_faces[axis], grid, axis)
        fluxes.append(flux)
    return fluxes


def beta_face_gradients(grid: Grid, beta: Potential) -> list[Array]:
    return [beta.face_gradient(grid, axis) for axis in range(grid.dim)]


def _advance(values: Array, nl: Nonlinearity, grid: Grid, dt: float, beta_faces: Sequence[Array] | None) -> Array:
    new = values + dt * flux_divergence(total_fluxes(values, nl, grid, beta_faces), grid)
    if not np.all(new > 0):
        raise StabilityError(f"nonpositive density after a step of {dt:.3g}; reduce dt")
    return new


def _check_dt(p: DensityField, nl: Nonlinearity, dt: float) -> None:
    if not dt > 0:
        raise StepSizeError(f"dt must be positive, got {dt!r}")
    limit = cfl_dt(p, nl)
    if dt > limit * (1 + 1e-12):
        raise StepSizeError(f"dt={dt:.6g} exceeds the CFL limit {limit:.6g}")


def step_diffusion(p: DensityField, nl: Nonlinearity, dt: float) -> DensityField:
    _check_dt(p, nl, dt)
    if not np.all(p.values > 0):
        raise StabilityError("density must be strictly positive")
    return p.with_values(_advance(p.values, nl, p.grid, dt, None), p.time_tag + dt)


def step_perturbed(p: DensityField, nl: Nonlinearity, beta: Potential, dt: float) -> DensityField:
    beta.validate(p.grid)
    _check_dt(p, nl, dt)
    if dt > drift_dt(p.grid, beta) * (1 + 1e-12):
        raise StepSizeError(f"dt={dt:.6g} exceeds the drift limit {drift_dt(p.grid, beta):.6g}")
    if not np.all(p.values > 0):
        raise StabilityError("density must be strictly positive")
    faces = beta_face_gradients(p.grid, beta)
    return p.with_values(_advance(p.values, nl, p.grid, dt, faces), p.time_tag + dt)


@dataclass
class PdeRun:
    nl: Nonlinearity
    grid: Grid
    dt: float
    t_start: float
    t_end: float
    snapshots: list[DensityField]
    kappa_report: tuple[float, float]
    n_steps: int
    snapshot_every: int
    beta: Potential | None = None
    halted: str | None = None
    mass_drift: float = 0.0
    warnings: list[str] = field(default_factory=list)

    @property
    def times(self) -> Array:
        return np.array([s.time_tag for s in self.snapshots])

    @property
    def horizon(self) -> float:
        """Last time the run reached; T_beta for perturbed runs."""
        return self.snapshots[-1].time_tag

    @property
    def snapshot_spacing(self) -> float:
        return self.dt * self.snapshot_every

    @property
    def perturbed(self) -> bool:
        return self.beta is not None

    def index_of(self, t: float) -> int:
        times = self.times
        k = int(np.argmin(np.abs(times - t)))
        if abs(times[k] - t) > 1e-9 * max(self.snapshot_spacing, abs(t)):
            raise InputError(f"no snapshot at t={t!r}")
        return k

    def field_at(self, t: float) -> DensityField:
        """Density at time t, linear in time between snapshots."""
        times = self.times
        slack = 1e-9 * self.snapshot_spacing
        if t < times[0] - slack or t > times[-1] + slack:
            raise InputError(f"t={t!r} outside the run [{times[0]}, {times[-1]}]")
        k = int(np.searchsorted(times, t, side="right")) - 1
        k = min(max(k, 0), len(times) - 1)
        if abs(t - times[k]) <= slack or k == len(times) - 1:
            return self.snapshots[k]
        if abs(times[k + 1] - t) <= slack:
            return self.snapshots[k + 1]
        w = (t - times[k]) / (times[k + 1] - times[k])
        values = (1.0 - w) * self.snapshots[k].values + w * self.snapshots[k + 1].values
        return self.snapshots[k].with_values(values, t)

    def summary(self) -> dict[str, Any]:
        return {
            "kappa_report": list(self.kappa_report),
            "n_steps": self.n_steps,
            "dt": self.dt,
            "mass_drift": self.mass_drift,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "horizon": self.horizon,
            "halted": self.halted,
            "n_snapshots": len(self.snapshots),
            "perturbation": None if self.beta is None else self.beta.label,
        }


def plan_steps(span: float, dt_max: float, snapshot_interval: float) -> tuple[float, int]:
    """Largest dt <= dt_max that divides the snapshot interval.

    Returns (dt, steps per snapshot).
    """
    if not snapshot_interval > 0 or not span > 0:
        raise InputError("span and snapshot interval must be positive")
    intervals = round(span / snapshot_interval)
    if intervals < 1 or abs(intervals * snapshot_interval - span) > 1e-9 * span:
        raise InputError(f"snapshot interval {snapshot_interval} does not divide the span {span}")
    steps = max(1, math.ceil(snapshot_interval / dt_max * (1 - 1e-12)))
    return snapshot_interval / steps, steps


def stable_dt(p0: DensityField, nl: Nonlinearity, beta: Potential | None, safety_factor: float = SAFETY_FACTOR) -> float:
    """Step that stays stable for the whole run.

    Unperturbed runs keep max p <= max p0. Perturbed runs are bounded by the
    upper end of the perturbed window.
    """
    if beta is None:
        return cfl_dt(p0, nl, safety_factor)
    _, upper = perturbed_window(p0)
    top = float(np.max(nl.fprime(np.array([upper, p0.max]))))
    return min(_diffusive_dt(p0.grid, top, safety_factor), drift_dt(p0.grid, beta))


def solve(
    p0: DensityField,
    nl: Nonlinearity,
    beta: Potential | None,
    t_end: float,
    dt: float | str = "cfl",
    snapshot_every: int = 1,
    *,
    safety_factor: float = SAFETY_FACTOR,
) -> PdeRun:
    """Runs from p0.time_tag to t_end.

    dt="cfl" picks the largest stable step that divides the span. Unperturbed
    runs must obey the comparison principle; perturbed runs stop early, and
    record it, when p leaves the perturbed window.
    """
    t0 = p0.time_tag
    span = t_end - t0
    if not span > 0:
        raise InputError(f"t_end={t_end} must exceed the start time {t0}")
    if snapshot_every < 1:
        raise InputError("snapshot_every must be a positive step count")
    if not np.all(p0.values > 0):
        raise InputError("initial density must be strictly positive")
    if beta is not None:
        beta.validate(p0.grid)

    if dt == "cfl":
        n_steps = math.ceil(span / stable_dt(p0, nl, beta, safety_factor) * (1 - 1e-12))
        step = span / n_steps
    else:
        step = float(dt)
        n_steps = round(span / step)
        if n_steps < 1 or abs(n_steps * step - span) > 1e-9 * span:
            raise InputError(f"dt={step} does not divide the span {span}")
    _check_dt(p0, nl, step)
    if beta is not None and step > drift_dt(p0.grid, beta) * (1 + 1e-12):
        raise StepSizeError(f"dt={step:.6g} exceeds the drift limit")

    grid = p0.grid
    faces = beta_face_gradients(grid, beta) if beta is not None else None
    if beta is None:
        lo, hi = p0.min - COMPARISON_SLACK, p0.max + COMPARISON_SLACK
    else:
        lo, hi = perturbed_window(p0)

    log.info({"msg": "solve", "n_steps": n_steps, "dt": step, "t0": t0, "t_end": t_end, "beta": getattr(beta, "label", None)})
    values = np.array(p0.values)
    snapshots = [p0]
    observed_min, observed_max = p0.min, p0.max
    halted = None
    run_warnings: list[str] = []
    for k in range(1, n_steps + 1):
        new = _advance(values, nl, grid, step, faces)
        new_min, new_max = float(np.min(new)), float(np.max(new))
        if new_min < lo or new_max > hi:
            if beta is None:
                raise BoundsError(
                    f"comparison principle violated at step {k}: [{new_min}, {new_max}] not in [{lo}, {hi}]"
                )
            halted = "bounds"
            message = f"perturbed density left [{lo:.6g}, {hi:.6g}] at t={t0 + k * step:.6g}"
            run_warnings.append(message)
            log.warning({"msg": "perturbed run halted", "t": t0 + k * step, "min": new_min, "max": new_max})
            break
        values = new
        observed_min, observed_max = min(observed_min, new_min), max(observed_max, new_max)
        if k % snapshot_every == 0 or k == n_steps:
            snapshots.append(DensityField(grid=grid, values=values, time_tag=t0 + k * step))

    mass0 = integrate(p0)
    drift = max(abs(integrate(s) - mass0) for s in snapshots)
    return PdeRun(
        nl=nl,
        grid=grid,
        dt=step,
        t_start=t0,
        t_end=t_end,
        snapshots=snapshots,
        kappa_report=(observed_min, observed_max),
        n_steps=k if halted is None else k - 1,
        snapshot_every=snapshot_every,
        beta=beta,
        halted=halted,
        mass_drift=drift,
        warnings=run_warnings,
    )
