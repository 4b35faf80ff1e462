#!/usr/bin/env python3
"""Experiment factors.

Every factor group is a gin-configurable function returning a plain dict;
`factors()` gathers them and `load_config()` validates the result into an
`ExperimentConfig`.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

import gin
import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    model_validator,
)

from .errors import ConfigError, InputError
from .grid import DensityField, Grid, read_field_csv
from .nonlinearity import Nonlinearity, from_spec
from .potential import Potential, SampledPotential, cosine_potential

MASS_TOL = 1e-8

DEFAULT_SLOPE_PERTURBATIONS = [
    {"kind": "cosine", "k": 1, "amplitude": 0.1},
    {"kind": "cosine", "k": 2, "amplitude": 0.1},
    {"kind": "cosine", "k": 1, "amplitude": -0.05},
    {"kind": "collinear", "scale": 0.5},
]


@gin.configurable
def factors(
    *,
    exp_name: str = gin.REQUIRED,
    description: str = "",
    out_dir: str = "out",
    storage_type: str = "tinydb",
) -> dict[str, Any]:
    return {
        "exp_name": exp_name,
        "description": description,
        "out_dir": out_dir,
        "storage_type": storage_type,
        "nonlinearity": nonlinearity(),
        "grid": grid(),
        "initial_density": initial_density(),
        "time_stepping": time_stepping(),
        "particles": particles(),
        "perturbation": perturbation(),
        "slope_perturbations": slope_perturbations(),
        "verification": verification(),
        "tolerances": tolerances(),
    }


@gin.configurable
def nonlinearity(*, kind: str = "porous_medium", m: float | None = 2.0) -> dict[str, Any]:
    return {"kind": kind, "m": m}


@gin.configurable
def grid(*, extent: Any = ((0.0, 1.0),), n_cells: Any = (200,)) -> dict[str, Any]:
    return {"extent": [list(e) for e in extent], "n_cells": list(n_cells)}


@gin.configurable
def initial_density(*, family: str = "cosine", amplitude: float = 0.5, path: str | None = None) -> dict[str, Any]:
    return {"family": family, "amplitude": amplitude, "path": path}


@gin.configurable
def time_stepping(
    *,
    t_end: float = 0.1,
    dt: float | str = "cfl",
    snapshot_interval: float = 1e-4,
    safety_factor: float = 0.45,
) -> dict[str, Any]:
    return {"t_end": t_end, "dt": dt, "snapshot_interval": snapshot_interval, "safety_factor": safety_factor}


@gin.configurable
def particles(
    *,
    enabled: bool = True,
    count: int = 10_000,
    dt: float = 1e-4,
    seed: int = 42,
    histogram_bins: int = 10,
    n_workers: int = 1,
    halving_count: int = 1000,
    marginal_time: float | None = None,
    regression_t0: float = 0.0,
    regression_lags: Any = (4, 8, 16),
    dump_particles: int = 100,
    perturbed: bool = False,
) -> dict[str, Any]:
    return {
        "enabled": enabled,
        "count": count,
        "dt": dt,
        "seed": seed,
        "histogram_bins": histogram_bins,
        "n_workers": n_workers,
        "halving_count": halving_count,
        "marginal_time": marginal_time,
        "regression_t0": regression_t0,
        "regression_lags": list(regression_lags),
        "dump_particles": dump_particles,
        "perturbed": perturbed,
    }


@gin.configurable
def perturbation(*, kind: str = "none", k: Any = 1, amplitude: float = 0.1, scale: float = 0.5) -> dict[str, Any]:
    return {"kind": kind, "k": k, "amplitude": amplitude, "scale": scale}


@gin.configurable
def slope_perturbations(*, items: Any = None) -> list[dict[str, Any]]:
    return [dict(i) for i in (DEFAULT_SLOPE_PERTURBATIONS if items is None else items)]


@gin.configurable
def verification(
    *,
    identity: bool = True,
    perturbed_identity: bool = True,
    decomposition: bool = True,
    slopes: bool = True,
    gradient_flow: bool = True,
    hwi: bool = True,
    flow: bool = True,
    hwi_pairs: int = 20,
    slope_t0: float = 0.0,
    flow_span: float = 1e-3,
) -> dict[str, Any]:
    return {
        "identity": identity,
        "perturbed_identity": perturbed_identity,
        "decomposition": decomposition,
        "slopes": slopes,
        "gradient_flow": gradient_flow,
        "hwi": hwi,
        "flow": flow,
        "hwi_pairs": hwi_pairs,
        "slope_t0": slope_t0,
        "flow_span": flow_span,
    }


@gin.configurable
def tolerances(**overrides: float) -> dict[str, float]:
    return overrides


def _divides(small: float, big: float) -> bool:
    ratio = big / small
    return round(ratio) >= 1 and abs(ratio - round(ratio)) <= 1e-9 * max(1.0, ratio)


class _Spec(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NonlinearitySpec(_Spec):
    kind: Literal["porous_medium", "linear"] = "porous_medium"
    m: float | None = 2.0

    @model_validator(mode="after")
    def _exponent(self) -> "NonlinearitySpec":
        if self.kind == "porous_medium" and (self.m is None or not self.m > 1):
            raise ValueError("porous medium exponent m must exceed 1")
        return self


class GridSpec(_Spec):
    extent: list[tuple[float, float]]
    n_cells: list[int]

    @model_validator(mode="after")
    def _shape(self) -> "GridSpec":
        if len(self.extent) not in (1, 2) or len(self.extent) != len(self.n_cells):
            raise ValueError("extent and n_cells must both have 1 or 2 entries")
        if any(hi <= lo for lo, hi in self.extent):
            raise ValueError("every axis needs hi > lo")
        if any(n < 4 for n in self.n_cells):
            raise ValueError("at least 4 cells per axis")
        return self

    @property
    def dim(self) -> int:
        return len(self.n_cells)


class InitialDensitySpec(_Spec):
    family: Literal["uniform", "cosine", "csv"] = "cosine"
    amplitude: float = Field(0.5, gt=-1.0, lt=1.0)
    path: str | None = None

    @model_validator(mode="after")
    def _path(self) -> "InitialDensitySpec":
        if self.family == "csv" and not self.path:
            raise ValueError("csv family needs a path")
        return self


class TimeSteppingSpec(_Spec):
    t_end: PositiveFloat = 0.1
    dt: Literal["cfl"] | PositiveFloat = "cfl"
    snapshot_interval: PositiveFloat = 1e-4
    safety_factor: float = Field(0.45, gt=0.0, le=0.45)

    @model_validator(mode="after")
    def _clock(self) -> "TimeSteppingSpec":
        if not _divides(self.snapshot_interval, self.t_end):
            raise ValueError("snapshot_interval must divide t_end")
        if self.dt != "cfl" and not _divides(float(self.dt), self.snapshot_interval):
            raise ValueError("dt must divide snapshot_interval")
        return self


class ParticleSpec(_Spec):
    enabled: bool = True
    count: PositiveInt = 10_000
    dt: PositiveFloat = 1e-4
    seed: NonNegativeInt = 42
    histogram_bins: PositiveInt = 10
    n_workers: PositiveInt = 1
    halving_count: PositiveInt = 1000
    marginal_time: float | None = None
    regression_t0: float = 0.0
    regression_lags: list[PositiveInt] = [4, 8, 16]
    dump_particles: NonNegativeInt = 100
    perturbed: bool = False


class PerturbationSpec(_Spec):
    kind: Literal["none", "cosine", "collinear"] = "none"
    # integer wavenumbers keep grad beta zero at the interval ends
    k: int = 1
    amplitude: float = 0.1
    scale: float = 0.5

    @model_validator(mode="after")
    def _scale(self) -> "PerturbationSpec":
        if self.kind == "collinear" and not self.scale > -1:
            raise ValueError("collinear scale must exceed -1")
        return self

    @property
    def label(self) -> str:
        if self.kind == "cosine":
            return f"{self.amplitude:g}cos({self.k}pi x)"
        if self.kind == "collinear":
            return f"collinear({self.scale:g})"
        return "none"


class VerificationSpec(_Spec):
    identity: bool = True
    perturbed_identity: bool = True
    decomposition: bool = True
    slopes: bool = True
    gradient_flow: bool = True
    hwi: bool = True
    flow: bool = True
    hwi_pairs: PositiveInt = 20
    slope_t0: float = 0.0
    flow_span: PositiveFloat = 1e-3


class ToleranceSpec(_Spec):
    mass: float = 1e-8
    anchor_entropy: float = 1e-3
    anchor_dissipation: float = 0.01
    identity: float = 0.01
    perturbed_identity: float = 0.02
    entropy_rate: float = 0.02
    mean_dissipation: float = 0.01
    martingale_se: float = 3.0
    mean_f: float = 0.05
    halving_low: float = 1.5
    halving_high: float = 2.5
    marginal: float = 0.1
    regression_slope: float = 0.1
    regression_intercept: float = 0.1
    metric_slope: float = 0.02
    w2_oracle: float = 1e-3
    entropy_slope_fd: float = 0.03
    slope_order: float = 1e-8
    slope_equality: float = 1e-6
    geodesic: float = 1e-3
    displacement_rate: float = 0.02
    convexity: float = 1e-4
    flow: float = 5e-3
    flow_halving: float = 1.5


class ExperimentConfig(_Spec):
    exp_name: str
    description: str = ""
    out_dir: str = "out"
    storage_type: Literal["tinydb", "none"] = "tinydb"
    nonlinearity: NonlinearitySpec = NonlinearitySpec()
    grid: GridSpec
    initial_density: InitialDensitySpec = InitialDensitySpec()
    time_stepping: TimeSteppingSpec = TimeSteppingSpec()
    particles: ParticleSpec = ParticleSpec()
    perturbation: PerturbationSpec = PerturbationSpec()
    slope_perturbations: list[PerturbationSpec] = Field(
        default_factory=lambda: [PerturbationSpec(**p) for p in DEFAULT_SLOPE_PERTURBATIONS]
    )
    verification: VerificationSpec = VerificationSpec()
    tolerances: ToleranceSpec = ToleranceSpec()

    @model_validator(mode="after")
    def _particle_clock(self) -> "ExperimentConfig":
        if self.particles.enabled and not _divides(self.particles.dt, self.time_stepping.snapshot_interval):
            raise ValueError("particles.dt must divide time_stepping.snapshot_interval")
        marginal = self.particles.marginal_time
        if marginal is not None and not 0 < marginal <= self.time_stepping.t_end:
            raise ValueError("particles.marginal_time must lie in (0, t_end]")
        return self

    @property
    def marginal_time(self) -> float:
        if self.particles.marginal_time is not None:
            return self.particles.marginal_time
        return self.time_stepping.t_end / 2


def _diagnostics(exc: ValidationError) -> list[str]:
    out = []
    for error in exc.errors():
        where = ".".join(str(part) for part in error["loc"]) or "<root>"
        out.append(f"{where}: {error['msg']}")
    return out


def validate_config(data: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError("invalid experiment config", _diagnostics(exc)) from exc


def load_config() -> ExperimentConfig:
    """Validates the factors bound by the currently parsed gin config."""
    try:
        data = factors()
    except (RuntimeError, TypeError, ValueError) as exc:
        raise ConfigError("gin bindings incomplete", [str(exc)]) from exc
    return validate_config(data)


def json_schema() -> dict[str, Any]:
    return ExperimentConfig.model_json_schema()


@dataclass(frozen=True)
class Problem:
    """Numerical objects built from a validated config."""

    config: ExperimentConfig
    nl: Nonlinearity
    grid: Grid
    p0: DensityField
    beta: Potential | None


def _initial_density(spec: InitialDensitySpec, g: Grid) -> DensityField:
    if spec.family == "uniform":
        return DensityField.uniform(g)
    if spec.family == "csv":
        path = Path(spec.path or "")
        if not path.exists():
            raise ConfigError("invalid experiment config", [f"initial_density.path: {path} does not exist"])
        try:
            return read_field_csv(path, g)
        except InputError as exc:
            raise ConfigError("invalid experiment config", [f"initial_density.path: {exc}"]) from exc
    (lo, hi) = g.extent[0]
    a = spec.amplitude

    def cosine(*x: np.ndarray) -> np.ndarray:
        return (1.0 + a * np.cos(np.pi * (x[0] - lo) / (hi - lo))) / g.volume

    return DensityField.from_function(g, cosine)


def make_potential(spec: PerturbationSpec, g: Grid, p: DensityField, nl: Nonlinearity) -> Potential | None:
    if spec.kind == "none":
        return None
    if spec.kind == "cosine":
        return cosine_potential(g, spec.amplitude, spec.k)
    return SampledPotential.collinear(p, nl, spec.scale)


def build_problem(config: ExperimentConfig) -> Problem:
    """Builds the grid, p0 and beta; invariant violations become ConfigError."""
    g = Grid(extent=tuple(config.grid.extent), n_cells=tuple(config.grid.n_cells))
    nl = from_spec(config.nonlinearity.model_dump())
    p0 = _initial_density(config.initial_density, g)
    mass = p0.mass
    if abs(mass - 1.0) > MASS_TOL:
        raise ConfigError("invalid experiment config", [f"initial_density: mass {mass!r} is not 1 within {MASS_TOL}"])
    if not p0.min > 0:
        raise ConfigError("invalid experiment config", ["initial_density: must be strictly positive"])
    beta = make_potential(config.perturbation, g, p0, nl)
    if beta is not None:
        try:
            beta.validate(g)
        except InputError as exc:
            raise ConfigError("invalid experiment config", [f"perturbation: {exc}"]) from exc
    for i, spec in enumerate(config.slope_perturbations):
        if spec.kind == "cosine":
            try:
                cosine_potential(g, spec.amplitude, spec.k).validate(g)
            except InputError as exc:
                raise ConfigError("invalid experiment config", [f"slope_perturbations.{i}: {exc}"]) from exc
    return Problem(config=config, nl=nl, grid=g, p0=p0, beta=beta)
