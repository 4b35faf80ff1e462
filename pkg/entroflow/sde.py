"""Particles of the reflected SDE dX = sqrt(2 f(p)/p) dW - grad beta dt - n dL.

Euler-Maruyama with left-point coefficients, mirror reflection per axis and
the running decomposition v(t, X_t) - v(t0, X_t0) = M_t + F_t. The density
comes from a PDE run, linear in time between its snapshots.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np
import numpy.typing as npt
import pandas as pd
from scipy import stats
from scipy.integrate import trapezoid

from . import rng
from .entropy import cross_term, dissipation_field, dissipation_functional, grad_h, perturbed_dissipation_field
from .errors import ContractError, InputError, StepSizeError
from .grid import DensityField, Grid, gradient_neumann, interpolate_values
from .nonlinearity import Nonlinearity
from .pde import PdeRun
from .potential import Potential

log = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]

MAX_REJECTION_TRIALS = 10_000


@dataclass
class ParticleState:
    """Positions (n, dim), local times (n,) and counter ids (n,) of a batch."""

    x: Array
    l: Array
    ids: npt.NDArray[np.int64]

    def __post_init__(self) -> None:
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.l = np.atleast_1d(np.asarray(self.l, dtype=np.float64))
        self.ids = np.atleast_1d(np.asarray(self.ids, dtype=np.int64))
        if not (self.x.shape[0] == self.l.shape[0] == self.ids.shape[0]):
            raise InputError("particle arrays must share their length")

    @classmethod
    def at(cls, x: Iterable[float], seed_id: int = 0) -> "ParticleState":
        return cls(x=np.atleast_2d(np.asarray(list(x), dtype=np.float64)), l=[0.0], ids=[seed_id])

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def take(self, index: slice) -> "ParticleState":
        return ParticleState(x=self.x[index], l=self.l[index], ids=self.ids[index])


def reflect(proposal: Array, grid: Grid) -> tuple[Array, Array]:
    """Mirror folding per axis (axis 0 first); returns positions and folded distance."""
    x = np.array(proposal, dtype=np.float64)
    dl = np.zeros(x.shape[0])
    for axis, (lo, hi) in enumerate(grid.extent):
        y = x[:, axis]
        width = hi - lo
        if np.any(y < lo - width) or np.any(y > hi + width):
            raise StepSizeError("proposal more than one domain width outside; reduce dt")
        below, above = y < lo, y > hi
        dl = dl + np.where(below, lo - y, 0.0) + np.where(above, y - hi, 0.0)
        y = np.where(below, 2 * lo - y, y)
        x[:, axis] = np.where(above, 2 * hi - y, y)
    return x, dl


def _em_step(state: ParticleState, p_field: DensityField, nl: Nonlinearity, drift: Array, dw: Array) -> ParticleState:
    if not np.all(p_field.values > 0):
        raise InputError("particle density must be strictly positive")
    dw = np.atleast_2d(dw)
    if not np.all(np.isfinite(dw)):
        raise InputError("gaussian increment must be finite")
    coef = nl.diffusion_coeff(interpolate_values(p_field.values, p_field.grid, state.x))
    x, dl = reflect(state.x + coef[:, None] * dw - drift, p_field.grid)
    return ParticleState(x=x, l=state.l + dl, ids=state.ids)


def em_step_reflected(
    state: ParticleState, p_field: DensityField, nl: Nonlinearity, dt: float, gaussian_increment: Array
) -> ParticleState:
    """One step; gaussian_increment is the Brownian increment (variance dt)."""
    if not dt > 0:
        raise InputError("dt must be positive")
    return _em_step(state, p_field, nl, np.zeros_like(state.x), gaussian_increment)


def em_step_perturbed(
    state: ParticleState,
    p_field: DensityField,
    nl: Nonlinearity,
    beta: Potential,
    dt: float,
    gaussian_increment: Array,
) -> ParticleState:
    if not dt > 0:
        raise InputError("dt must be positive")
    return _em_step(state, p_field, nl, beta.gradient_at(state.x) * dt, gaussian_increment)


@dataclass(frozen=True)
class StepFields:
    """Cell fields needed along particle paths at one time."""

    p: DensityField
    grad_v: Array
    dissipation: Array
    grad_h: Array | None = None

    @classmethod
    def build(cls, p: DensityField, nl: Nonlinearity, beta: Potential | None) -> "StepFields":
        v = nl.pressure(p.values)
        return cls(
            p=p,
            grad_v=gradient_neumann(v, p.grid),
            dissipation=dissipation_field(p, nl) if beta is None else perturbed_dissipation_field(p, nl, beta),
            grad_h=grad_h(p, nl) if beta is not None else None,
        )

    def density_at(self, x: Array) -> Array:
        return interpolate_values(self.p.values, self.p.grid, x)

    def vector_at(self, cells: Array, x: Array) -> Array:
        return np.stack([interpolate_values(c, self.p.grid, x) for c in cells], axis=-1)

    def dissipation_at(self, x: Array) -> Array:
        return interpolate_values(self.dissipation, self.p.grid, x)


@dataclass
class DecompositionAccumulator:
    """Running M, F and v(t, X_t) of a batch; one accumulate call per step."""

    m: Array
    f: Array
    v: Array
    v0: Array
    next_step: int = 0

    @classmethod
    def start(cls, state: ParticleState, fields: StepFields, nl: Nonlinearity, first_step: int = 0) -> "DecompositionAccumulator":
        v0 = nl.pressure(fields.density_at(state.x))
        zeros = np.zeros(state.n)
        return cls(m=zeros, f=zeros.copy(), v=v0.copy(), v0=v0, next_step=first_step)

    @property
    def residual(self) -> Array:
        return self.v - self.v0 - self.m - self.f


def accumulate_decomposition(
    acc: DecompositionAccumulator,
    before: ParticleState,
    after: ParticleState,
    dw: Array,
    step: int,
    fields_left: StepFields,
    fields_right: StepFields,
    nl: Nonlinearity,
    dt: float,
) -> DecompositionAccumulator:
    """Adds <sigma grad v, dW> and D dt at the left point, appends v at the new point.

    `step` is the counter of the increment the step consumed; it must match
    the accumulator's next step.
    """
    if step != acc.next_step:
        raise ContractError(f"increment of step {step} used where step {acc.next_step} was due")
    sigma = nl.diffusion_coeff(fields_left.density_at(before.x))
    dm = np.sum(sigma[:, None] * fields_left.vector_at(fields_left.grad_v, before.x) * np.atleast_2d(dw), axis=1)
    df = fields_left.dissipation_at(before.x) * dt
    v = nl.pressure(fields_right.density_at(after.x))
    return DecompositionAccumulator(m=acc.m + dm, f=acc.f + df, v=v, v0=acc.v0, next_step=step + 1)


def sample_initial(p0: DensityField, seed: int, ids: npt.NDArray[np.int64]) -> Array:
    """Inverse CDF of the piecewise-constant density in 1-D, rejection in 2-D."""
    grid = p0.grid
    if grid.dim == 1:
        u = rng.uniforms(seed, ids, 0, 1)[:, 0]
        cdf = np.concatenate([[0.0], np.cumsum(p0.values) * grid.dx[0]])
        return np.interp(u * cdf[-1], cdf, grid.faces(0)).reshape(-1, 1)

    out = np.empty((ids.shape[0], grid.dim))
    pending = np.arange(ids.shape[0])
    envelope = p0.max
    lower, width = grid.lower, grid.upper - grid.lower
    for trial in range(MAX_REJECTION_TRIALS):
        if pending.size == 0:
            return out
        u = rng.uniforms(seed, ids[pending], trial, grid.dim + 1)
        x = lower + u[:, : grid.dim] * width
        cells = tuple(
            np.minimum((x[:, a] - lower[a]) // grid.dx[a], grid.n_cells[a] - 1).astype(int)
            for a in range(grid.dim)
        )
        accept = u[:, grid.dim] * envelope <= p0.values[cells]
        out[pending[accept]] = x[accept]
        pending = pending[~accept]
    raise InputError("rejection sampling did not finish; density too peaked")


def bin_masses(values: Array, grid: Grid, bins: int) -> Array:
    """Aggregates cell masses into `bins` equal bins per axis."""
    for n in grid.n_cells:
        if n % bins:
            raise InputError(f"{bins} bins do not divide {n} cells")
    masses = values * grid.cell_volume
    shape = []
    for n in grid.n_cells:
        shape.extend([bins, n // bins])
    summed = masses.reshape(shape)
    return summed.sum(axis=tuple(range(1, 2 * grid.dim, 2)))


def particle_histogram(x: Array, grid: Grid, bins: int) -> Array:
    edges = [np.linspace(lo, hi, bins + 1) for lo, hi in grid.extent]
    counts, _ = np.histogramdd(x, bins=edges)
    return counts / x.shape[0]


@dataclass
class TrajectoryRecord:
    """Paths at the recorded steps; arrays are (times, particles[, dim])."""

    times: Array
    steps: npt.NDArray[np.int64]
    x_path: Array
    l_path: Array
    v_path: Array
    m_path: Array
    f_path: Array
    d_path: Array
    dw_increments: Array | None = None

    def index_of_step(self, step: int) -> int:
        hits = np.flatnonzero(self.steps == step)
        if hits.size == 0:
            raise InputError(f"step {step} was not recorded")
        return int(hits[0])

    def residual(self, k: int) -> Array:
        return self.v_path[k] - self.v_path[0] - self.m_path[k] - self.f_path[k]

    def particle(self, i: int) -> pd.DataFrame:
        columns: dict[str, Any] = {"particle_id": i, "t": self.times}
        for a in range(self.x_path.shape[-1]):
            columns[f"x{a}"] = self.x_path[:, i, a]
        columns.update(l=self.l_path[:, i], v=self.v_path[:, i], m=self.m_path[:, i], f=self.f_path[:, i])
        return pd.DataFrame(columns)

    def to_frame(self, max_particles: int | None = None) -> pd.DataFrame:
        n = self.x_path.shape[1] if max_particles is None else min(max_particles, self.x_path.shape[1])
        return pd.concat([self.particle(i) for i in range(n)], ignore_index=True)


@dataclass
class EnsembleResult:
    record: TrajectoryRecord
    summaries: list[dict[str, Any]]
    dt: float
    seed: int
    n_particles: int
    t_start: float
    perturbation: str | None
    residual_constant: float
    cross_term_mc: Array | None = None
    warnings: list[str] = field(default_factory=list)

    def summary_at(self, t: float) -> dict[str, Any]:
        for s in self.summaries:
            if abs(s["t"] - t) <= 1e-9 * max(1.0, abs(t)):
                return s
        raise InputError(f"no ensemble summary at t={t!r}")

    def to_json(self) -> dict[str, Any]:
        return {
            "dt": self.dt,
            "seed": self.seed,
            "n_particles": self.n_particles,
            "t_start": self.t_start,
            "perturbation": self.perturbation,
            "residual_constant": self.residual_constant,
            "summaries": self.summaries,
        }


def _summarise(t: float, state: ParticleState, acc: DecompositionAccumulator, grid: Grid, bins: int) -> dict[str, Any]:
    n = state.n
    return {
        "t": t,
        "mean_v": float(np.mean(acc.v)),
        "mean_m": float(np.mean(acc.m)),
        "se_m": float(np.std(acc.m, ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        "mean_f": float(np.mean(acc.f)),
        "se_f": float(np.std(acc.f, ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        "local_time_fraction": float(np.mean(state.l > 0)),
        "mean_local_time": float(np.mean(state.l)),
        "hist": particle_histogram(state.x, grid, bins).tolist(),
    }


def _chunk_bounds(n: int, workers: int) -> list[slice]:
    size = math.ceil(n / workers)
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def _advance_chunk(
    state: ParticleState,
    acc: DecompositionAccumulator,
    dw: Array,
    step: int,
    left: StepFields,
    right: StepFields,
    nl: Nonlinearity,
    beta: Potential | None,
    dt: float,
) -> tuple[ParticleState, DecompositionAccumulator, Array | None]:
    drift = beta.gradient_at(state.x) * dt if beta is not None else np.zeros_like(state.x)
    after = _em_step(state, left.p, nl, drift, dw)
    cross = None
    if beta is not None and left.grad_h is not None:
        cross = np.sum(left.vector_at(left.grad_h, state.x) * beta.gradient_at(state.x), axis=1)
    return after, accumulate_decomposition(acc, state, after, dw, step, left, right, nl, dt), cross


def _merge(parts: list[tuple[ParticleState, DecompositionAccumulator, Array | None]]) -> tuple[ParticleState, DecompositionAccumulator, Array | None]:
    states = [p[0] for p in parts]
    accs = [p[1] for p in parts]
    crosses = [p[2] for p in parts]
    state = ParticleState(
        x=np.concatenate([s.x for s in states]),
        l=np.concatenate([s.l for s in states]),
        ids=np.concatenate([s.ids for s in states]),
    )
    acc = DecompositionAccumulator(
        m=np.concatenate([a.m for a in accs]),
        f=np.concatenate([a.f for a in accs]),
        v=np.concatenate([a.v for a in accs]),
        v0=np.concatenate([a.v0 for a in accs]),
        next_step=accs[0].next_step,
    )
    cross = None if crosses[0] is None else np.concatenate(crosses)
    return state, acc, cross


def simulate_ensemble(
    p_run: PdeRun,
    nl: Nonlinearity,
    beta: Potential | None,
    n_particles: int,
    dt: float,
    seed: int,
    *,
    record_every: int | None = None,
    record_steps: Iterable[int] = (),
    histogram_bins: int = 10,
    n_workers: int = 1,
    keep_increments: bool = False,
) -> EnsembleResult:
    """Runs n_particles paths from p_run.t_start to the end of the run."""
    spacing = p_run.snapshot_spacing
    ratio = spacing / dt
    if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
        raise InputError(f"particle dt={dt} must divide the snapshot spacing {spacing}")
    warnings = []
    if spacing > 10 * dt * (1 + 1e-12):
        warnings.append(f"snapshot spacing {spacing:g} exceeds 10 particle steps")
        log.warning({"msg": "coarse snapshots", "spacing": spacing, "dt": dt})
    if beta is not None:
        beta.validate(p_run.grid)
    grid = p_run.grid
    n_steps = int(math.floor((p_run.horizon - p_run.t_start) / dt + 1e-9))
    if n_steps < 1:
        raise InputError("run shorter than one particle step")
    every = record_every or max(1, n_steps // 100)
    recorded = sorted({0, n_steps, *range(0, n_steps + 1, every), *(s for s in record_steps if 0 <= s <= n_steps)})
    recorded_set = set(recorded)

    ids = np.arange(n_particles, dtype=np.int64)
    state = ParticleState(x=sample_initial(p_run.snapshots[0], seed, ids), l=np.zeros(n_particles), ids=ids)
    left = StepFields.build(p_run.field_at(p_run.t_start), nl, beta)
    acc = DecompositionAccumulator.start(state, left, nl)

    rows: dict[str, list[Array]] = {k: [] for k in ("x", "l", "v", "m", "f", "d")}
    times, summaries, cross_means = [], [], []
    increments = [] if keep_increments else None

    def record(k: int, fields: StepFields) -> None:
        t = p_run.t_start + k * dt
        times.append(t)
        for key, value in (("x", state.x), ("l", state.l), ("v", acc.v), ("m", acc.m), ("f", acc.f)):
            rows[key].append(np.array(value))
        rows["d"].append(fields.dissipation_at(state.x))
        summaries.append(_summarise(t, state, acc, grid, histogram_bins))

    log.info({"msg": "simulate", "particles": n_particles, "steps": n_steps, "dt": dt, "workers": n_workers})
    record(0, left)
    chunks = _chunk_bounds(n_particles, max(1, n_workers))
    with ThreadPoolExecutor(max_workers=max(1, n_workers)) as pool:
        for k in range(n_steps):
            right = StepFields.build(p_run.field_at(p_run.t_start + (k + 1) * dt), nl, beta)
            dw = math.sqrt(dt) * rng.gaussian_increments(seed, ids, k, grid.dim)
            if len(chunks) == 1:
                state, acc, cross = _advance_chunk(state, acc, dw, k, left, right, nl, beta, dt)
            else:
                parts = list(
                    pool.map(
                        lambda c: _advance_chunk(
                            state.take(c),
                            DecompositionAccumulator(acc.m[c], acc.f[c], acc.v[c], acc.v0[c], acc.next_step),
                            dw[c],
                            k,
                            left,
                            right,
                            nl,
                            beta,
                            dt,
                        ),
                        chunks,
                    )
                )
                state, acc, cross = _merge(parts)
            if cross is not None:
                cross_means.append(float(np.mean(cross)))
            if increments is not None:
                increments.append(dw)
            left = right
            if k + 1 in recorded_set:
                record(k + 1, left)

    horizon = n_steps * dt
    residual = np.abs(acc.residual)
    constant = float(np.median(residual) / (dt * horizon))
    trajectory = TrajectoryRecord(
        times=np.array(times),
        steps=np.array(recorded, dtype=np.int64),
        x_path=np.stack(rows["x"]),
        l_path=np.stack(rows["l"]),
        v_path=np.stack(rows["v"]),
        m_path=np.stack(rows["m"]),
        f_path=np.stack(rows["f"]),
        d_path=np.stack(rows["d"]),
        dw_increments=None if increments is None else np.stack(increments),
    )
    cross_integral = None
    if cross_means:
        cross_integral = np.concatenate([[0.0], np.cumsum(cross_means) * dt])
    return EnsembleResult(
        record=trajectory,
        summaries=summaries,
        dt=dt,
        seed=seed,
        n_particles=n_particles,
        t_start=p_run.t_start,
        perturbation=None if beta is None else beta.label,
        residual_constant=constant,
        cross_term_mc=cross_integral,
        warnings=warnings,
    )


def decomposition_step_residuals(
    p_run: PdeRun,
    nl: Nonlinearity,
    beta: Potential | None,
    dt: float,
    n_particles: int,
    seed: int,
    t0: float | None = None,
) -> Array:
    """|v(t0+dt, X) - v(t0, X0) - dM - dF| after a single step from t0."""
    t0 = p_run.t_start if t0 is None else t0
    ids = np.arange(n_particles, dtype=np.int64)
    left = StepFields.build(p_run.field_at(t0), nl, beta)
    right = StepFields.build(p_run.field_at(t0 + dt), nl, beta)
    state = ParticleState(x=sample_initial(left.p, seed, ids), l=np.zeros(n_particles), ids=ids)
    acc = DecompositionAccumulator.start(state, left, nl)
    dw = math.sqrt(dt) * rng.gaussian_increments(seed, ids, 0, p_run.grid.dim)
    _, acc, _ = _advance_chunk(state, acc, dw, 0, left, right, nl, beta, dt)
    return np.abs(acc.residual)


def decomposition_halving(
    p_run: PdeRun,
    nl: Nonlinearity,
    beta: Potential | None,
    dt: float,
    n_particles: int,
    seed: int,
    t0: float | None = None,
) -> dict[str, float]:
    """Median single-step residual at dt and dt/2 (same standard normals)."""
    coarse = float(np.median(decomposition_step_residuals(p_run, nl, beta, dt, n_particles, seed, t0)))
    fine = float(np.median(decomposition_step_residuals(p_run, nl, beta, dt / 2, n_particles, seed, t0)))
    return {"median_dt": coarse, "median_half_dt": fine, "ratio": coarse / fine if fine > 0 else math.inf}


def conditional_rate_regression(
    result: EnsembleResult, t0: float, lags: Iterable[int] = (4, 8, 16)
) -> list[dict[str, float]]:
    """Regresses (v(t,X_t) - v(t0,X_t0))/(t - t0) on D(t0, X_t0).

    The martingale increment is subtracted first: it has zero conditional
    mean given the state at t0, so the regression target is unchanged while
    its Brownian noise is removed. The raw_* fields hold the same regression
    without the subtraction.
    """
    record = result.record
    k0 = int(round((t0 - result.t_start) / result.dt))
    i0 = record.index_of_step(k0)
    out = []
    for lag in lags:
        i1 = record.index_of_step(k0 + lag)
        elapsed = lag * result.dt
        raw = (record.v_path[i1] - record.v_path[i0]) / elapsed
        fit = stats.linregress(record.d_path[i0], raw - (record.m_path[i1] - record.m_path[i0]) / elapsed)
        raw_fit = stats.linregress(record.d_path[i0], raw)
        out.append(
            {
                "lag": lag,
                "elapsed": elapsed,
                "slope": float(fit.slope),
                "intercept": float(fit.intercept),
                "slope_stderr": float(fit.stderr),
                "raw_slope": float(raw_fit.slope),
                "raw_intercept": float(raw_fit.intercept),
                "raw_slope_stderr": float(raw_fit.stderr),
            }
        )
    return out


def marginal_l1(result: EnsembleResult, p_run: PdeRun, t: float, bins: int) -> float:
    """L1 distance between the particle histogram and the PDE density, in bin masses."""
    hist = np.asarray(result.summary_at(t)["hist"])
    masses = bin_masses(p_run.field_at(t).values, p_run.grid, bins)
    return float(np.sum(np.abs(hist - masses)))


def _time_integral(p_run: PdeRun, t: float, integrand: Callable[[DensityField], float]) -> float:
    """Trapezoidal integral of integrand(p_u) over the snapshots up to t."""
    times = p_run.times
    keep = times <= t + 1e-12
    values = [integrand(s) for s, kept in zip(p_run.snapshots, keep) if kept]
    return float(trapezoid(values, times[keep]))


def expected_mean_f(p_run: PdeRun, nl: Nonlinearity, t: float) -> float:
    """-int_{t0}^{t} (I(p_u) + cross term) du by the trapezoidal rule on snapshots."""
    beta = p_run.beta

    def integrand(s: DensityField) -> float:
        value = dissipation_functional(s, nl)
        if beta is not None:
            value += cross_term(s, nl, beta)
        return value

    return -_time_integral(p_run, t, integrand)


def expected_cross_integral(p_run: PdeRun, nl: Nonlinearity, t: float) -> float:
    """int_{t0}^{t} <grad h(p_u), grad beta> p_u du, the target of EnsembleResult.cross_term_mc."""
    beta = p_run.beta
    if beta is None:
        raise InputError("the run carries no perturbation")
    return _time_integral(p_run, t, lambda s: cross_term(s, nl, beta))
