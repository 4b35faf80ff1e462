"""Quadratic Wasserstein distances, monotone transport maps and the slope and
HWI checks built on them.

1-D distances integrate the difference of the exact quantile functions of
piecewise-constant densities. Everything else (2-D fields, the oracle for
1-D) goes through the exact network simplex of POT.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Literal, Sequence

import numpy as np
import numpy.typing as npt
import ot

from .entropy import entropy_functional, grad_h
from .errors import ContractError, DimensionError, DomainError, InputError, SingularDirectionError
from .grid import DensityField, Grid, gradient_neumann, integrate, interpolate_values
from .nonlinearity import Nonlinearity
from .pde import PdeRun
from .potential import Potential

log = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]

MASS_TOL = 1e-6
MAX_SUPPORT = 10_000
NODES_PER_CELL = 10
PUSHFORWARD_TOL = 1e-6
MONOTONE_SLACK = 1e-12
SINGULAR_NORM = 1e-12
BOUNDARY_MATCH_TOL = 1e-6
# below this the expected geodesic slope counts as zero
RATE_FLOOR = 1e-8
LADDER = (64, 32, 16, 8, 4, 2, 1)


def _require_1d(*fields: DensityField) -> None:
    for f in fields:
        if f.grid.dim != 1:
            raise DimensionError(f"expected a 1-D density, got dim={f.grid.dim}")


def _cdf(p: DensityField) -> tuple[Array, Array]:
    """Faces and normalised CDF values at the faces."""
    mass = integrate(p)
    if abs(mass - 1.0) > MASS_TOL:
        raise InputError(f"density has mass {mass!r}, expected 1")
    faces = p.grid.faces(0)
    cdf = np.concatenate([[0.0], np.cumsum(p.values) * p.grid.dx[0]]) / mass
    return faces, cdf


def _quantile_knots(p: DensityField) -> tuple[Array, Array]:
    """CDF knots from the last empty face to the first full one.

    Interior flat runs keep both ends, so the quantile function jumps there.
    """
    faces, cdf = _cdf(p)
    first = int(np.flatnonzero(cdf > 0.0)[0]) - 1
    last = int(np.flatnonzero(cdf >= cdf[-1])[0])
    faces, cdf = faces[first : last + 1], cdf[first : last + 1]
    step = np.diff(cdf) > 0
    keep = np.concatenate([[True], step]) | np.concatenate([step, [True]])
    return faces[keep], cdf[keep]


def quantile_function(p: DensityField, s: Array, side: Literal["left", "right"] = "left") -> Array:
    """Q(s) = inf{x : F(x) >= s}; side="right" gives the limit from above at jumps."""
    faces, cdf = _quantile_knots(p)
    s = np.asarray(s, dtype=np.float64)
    hi = np.clip(np.searchsorted(cdf, s, side=side), 1, cdf.size - 1)
    lo = hi - 1
    frac = np.clip((s - cdf[lo]) / (cdf[hi] - cdf[lo]), 0.0, 1.0)
    return faces[lo] + frac * (faces[hi] - faces[lo])


def cdf_function(p: DensityField, x: Array) -> Array:
    faces, cdf = _cdf(p)
    return np.interp(x, faces, cdf)


def _quantile_nodes(mu: DensityField, nu: DensityField) -> Array:
    """Union of both CDF breakpoints and a uniform ladder of nodes in [0, 1]."""
    n = max(mu.grid.n_cells[0], nu.grid.n_cells[0])
    ladder = np.linspace(0.0, 1.0, NODES_PER_CELL * n + 1)
    return np.unique(np.concatenate([_quantile_knots(mu)[1], _quantile_knots(nu)[1], ladder]))


def _quantile_gap(mu: DensityField, nu: DensityField, s: Array, side: Literal["left", "right"]) -> Array:
    return quantile_function(mu, s, side) - quantile_function(nu, s, side)


def w2_1d(mu: DensityField, nu: DensityField) -> float:
    """sqrt(int_0^1 |Q_mu(s) - Q_nu(s)|^2 ds).

    Both quantile functions are linear inside every segment between nodes, so
    Simpson's rule with one-sided endpoint limits is exact.
    """
    _require_1d(mu, nu)
    s = _quantile_nodes(mu, nu)
    mid = 0.5 * (s[1:] + s[:-1])
    start = _quantile_gap(mu, nu, s[:-1], "right")
    stop = _quantile_gap(mu, nu, s[1:], "left")
    dm = _quantile_gap(mu, nu, mid, "left")
    total = float(np.sum(np.diff(s) / 6.0 * (start**2 + 4.0 * dm**2 + stop**2)))
    return math.sqrt(max(total, 0.0))


def _weights(w: npt.ArrayLike, name: str) -> Array:
    arr = np.ascontiguousarray(w, dtype=np.float64).ravel()
    if arr.size == 0 or not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise InputError(f"{name} weights must be finite, nonnegative and nonempty")
    total = float(np.sum(arr))
    if abs(total - 1.0) > MASS_TOL:
        raise InputError(f"{name} weights sum to {total!r}, not 1")
    return arr / total


def w2_discrete(mu_weights: npt.ArrayLike, nu_weights: npt.ArrayLike, cost_matrix: npt.ArrayLike) -> float:
    """Exact discrete W2 by network simplex; cost holds squared distances."""
    a = _weights(mu_weights, "source")
    b = _weights(nu_weights, "target")
    cost = np.ascontiguousarray(cost_matrix, dtype=np.float64)
    if cost.shape != (a.size, b.size):
        raise InputError(f"cost matrix shape {cost.shape} does not match weights ({a.size}, {b.size})")
    if max(a.size, b.size) > MAX_SUPPORT:
        raise InputError(f"discrete OT limited to {MAX_SUPPORT} support points")
    if not np.all(np.isfinite(cost)) or np.any(cost < 0):
        raise InputError("cost matrix must be finite and nonnegative")
    value, result = ot.emd2(a, b, cost, numItermax=10_000_000, log=True)
    if result.get("warning"):
        raise InputError(f"network simplex did not reach the optimum: {result['warning']}")
    return math.sqrt(max(float(value), 0.0))


def _atoms(p: DensityField) -> tuple[Array, Array]:
    points = np.stack([c.ravel() for c in p.grid.mesh()], axis=-1)
    return p.values.ravel() * p.grid.cell_volume, points


def w2_grid(mu: DensityField, nu: DensityField) -> float:
    """W2 between grid densities as atoms at the cell centres (any dimension)."""
    if mu.grid.dim != nu.grid.dim:
        raise DimensionError("densities live in different dimensions")
    a, xa = _atoms(mu)
    b, xb = _atoms(nu)
    return w2_discrete(a, b, ot.dist(xa, xb))


@dataclass(frozen=True)
class TransportPlan1D:
    """Monotone rearrangement of source onto target.

    map_values is the map sampled at the source cell centres.
    """

    source: DensityField
    target: DensityField
    map_values: Array = field(repr=False)
    w2: float

    def displacement(self) -> Array:
        """map(z) - z at the source centres."""
        return self.map_values - self.source.grid.centers(0)

    def to_json(self) -> dict[str, Any]:
        return {
            "w2": self.w2,
            "x": self.source.grid.centers(0).tolist(),
            "map": self.map_values.tolist(),
        }


def build_plan(source: DensityField, target: DensityField) -> TransportPlan1D:
    _require_1d(source, target)
    centers = source.grid.centers(0)
    levels = cdf_function(source, centers)
    map_values = quantile_function(target, levels)
    if np.any(np.diff(map_values) < -MONOTONE_SLACK):
        raise ContractError("transport map is not nondecreasing")
    pushed = cdf_function(target, map_values)
    if np.max(np.abs(pushed - levels)) > PUSHFORWARD_TOL:
        raise ContractError("transport map does not push the source CDF onto the target")
    return TransportPlan1D(source=source, target=target, map_values=map_values, w2=w2_1d(source, target))


def _span_grid(plan: TransportPlan1D) -> Grid:
    src, tgt = plan.source.grid, plan.target.grid
    if src == tgt:
        return src
    lo = min(src.extent[0][0], tgt.extent[0][0])
    hi = max(src.extent[0][1], tgt.extent[0][1])
    n = max(4, int(round((hi - lo) / src.dx[0])))
    return Grid.interval(lo, hi, n)


def displacement_interpolation(plan: TransportPlan1D, t: float) -> DensityField:
    """Push-forward of the source under (1 - t) Id + t map.

    Its quantile function is (1 - t) Q_source + t Q_target; the result is the
    exact cell mass of that law on a grid spanning both supports.
    """
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"interpolation time {t!r} outside [0, 1]")
    grid = _span_grid(plan)
    nodes = _quantile_nodes(plan.source, plan.target)
    s = np.repeat(nodes, 2)
    below = (1.0 - t) * quantile_function(plan.source, nodes) + t * quantile_function(plan.target, nodes)
    above = (1.0 - t) * quantile_function(plan.source, nodes, "right") + t * quantile_function(
        plan.target, nodes, "right"
    )
    q = np.column_stack([below, above]).ravel()
    keep = np.concatenate([[True], np.diff(q) > 0])
    cdf = np.interp(grid.faces(0), q[keep], s[keep], left=0.0, right=1.0)
    return DensityField(grid=grid, values=np.diff(cdf) / grid.dx[0], time_tag=t)


def _h_plus_beta(p: DensityField, nl: Nonlinearity, beta: Potential | None) -> Array:
    direction = grad_h(p, nl)
    if beta is not None:
        direction = direction + beta.cell_gradient(p.grid)
    return direction


def _weighted_norm(vec: Array, p: DensityField) -> float:
    return math.sqrt(max(integrate(np.sum(vec**2, axis=0) * p.values, p.grid), 0.0))


@dataclass
class SlopeReport:
    t0: float
    analytic_slope: float
    spacings: list[float]
    finite_difference_slopes: list[float]
    richardson: float | None = None
    converges_monotonically: bool = False
    entropy_slope_unperturbed: float | None = None
    entropy_slope_perturbed: dict[str, float] = field(default_factory=dict)
    entropy_slope_fd_unperturbed: float | None = None
    entropy_slope_fd_perturbed: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def finest_rel_error(self) -> float:
        scale = max(abs(self.analytic_slope), SINGULAR_NORM)
        return abs(self.finite_difference_slopes[-1] - self.analytic_slope) / scale

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def _ladder(run: PdeRun, k0: int, min_spacing: float) -> list[int]:
    last = len(run.snapshots) - 1
    lags = [lag for lag in LADDER if k0 + lag <= last and lag * run.snapshot_spacing >= min_spacing * (1 - 1e-9)]
    return lags


def curve_metric_slope(
    run: PdeRun, nl: Nonlinearity, beta: Potential | None, t0: float, min_spacing: float | None = None
) -> SlopeReport:
    """Speed of t -> p_t in W2 at t0 against ||grad h(p_t0) + grad beta||_{L2(p_t0)}."""
    _require_1d(run.snapshots[0])
    k0 = run.index_of(t0)
    min_spacing = 4 * run.dt if min_spacing is None else min_spacing
    lags = _ladder(run, k0, min_spacing)
    if len(lags) < 2:
        raise InputError("too few snapshots after t0 for a slope ladder")
    p0 = run.snapshots[k0]
    analytic = _weighted_norm(_h_plus_beta(p0, nl, beta), p0)
    spacings, slopes = [], []
    for lag in lags:
        pt = run.snapshots[k0 + lag]
        spacing = pt.time_tag - p0.time_tag
        spacings.append(spacing)
        slopes.append(w2_1d(pt, p0) / spacing)
    errors = [abs(s - analytic) for s in slopes]
    report = SlopeReport(
        t0=p0.time_tag,
        analytic_slope=analytic,
        spacings=spacings,
        finite_difference_slopes=slopes,
        richardson=2 * slopes[-1] - slopes[-2] if lags[-2] == 2 * lags[-1] else None,
        converges_monotonically=bool(np.all(np.diff(errors) <= 1e-12 * max(1.0, analytic))),
    )
    log.info({"msg": "metric slope", "t0": report.t0, "analytic": analytic, "fd": slopes[-1]})
    return report


def _fd_entropy_slope(run: PdeRun, nl: Nonlinearity, p0: DensityField, spacing: float) -> float:
    pt = run.field_at(p0.time_tag + spacing)
    distance = w2_1d(pt, p0)
    if distance <= 0:
        raise SingularDirectionError("curve did not move in W2 over the spacing")
    return (entropy_functional(pt, nl) - entropy_functional(p0, nl)) / distance


def entropy_slope_comparison(
    run: PdeRun,
    perturbed: Sequence[tuple[Potential, PdeRun]],
    nl: Nonlinearity,
    t0: float,
    spacing: float | None = None,
) -> SlopeReport:
    """Entropy slope -sqrt(I) of the unperturbed curve against the slope
    -<grad h, (grad h + grad beta)/||.||> of each perturbed curve, both also
    estimated by dF/dW2 over `spacing`.

    Every perturbed run must start from the unperturbed snapshot at t0.
    """
    report = curve_metric_slope(run, nl, None, t0)
    p0 = run.snapshots[run.index_of(t0)]
    spacing = report.spacings[-1] if spacing is None else spacing
    g = grad_h(p0, nl)
    dissipation = integrate(np.sum(g**2, axis=0) * p0.values, p0.grid)
    report.entropy_slope_unperturbed = -math.sqrt(dissipation)
    try:
        report.entropy_slope_fd_unperturbed = _fd_entropy_slope(run, nl, p0, spacing)
    except SingularDirectionError as exc:
        report.warnings.append(str(exc))
    for beta, run_beta in perturbed:
        if abs(run_beta.t_start - p0.time_tag) > 1e-12 or run_beta.grid != p0.grid:
            raise InputError(f"perturbed run for {beta.label!r} does not start from p(t0)")
        direction = g + beta.cell_gradient(p0.grid)
        norm = _weighted_norm(direction, p0)
        if norm <= SINGULAR_NORM:
            raise SingularDirectionError(f"grad h + grad beta vanishes for {beta.label!r}")
        inner = integrate(np.sum(g * direction, axis=0) * p0.values, p0.grid)
        report.entropy_slope_perturbed[beta.label] = -inner / norm
        if run_beta.horizon - p0.time_tag < spacing * (1 - 1e-9):
            report.warnings.append(f"perturbed run {beta.label!r} halted before t0 + {spacing:g}")
            continue
        try:
            report.entropy_slope_fd_perturbed[beta.label] = _fd_entropy_slope(run_beta, nl, p0, spacing)
        except SingularDirectionError as exc:
            report.warnings.append(f"{beta.label}: {exc}")
    log.info({"msg": "entropy slopes", "FW": report.entropy_slope_unperturbed, **report.entropy_slope_perturbed})
    return report


@dataclass
class HwiResult:
    lhs: float
    mid: float
    rhs: float
    tol: float
    w2: float
    holds: bool
    warnings: list[str] = field(default_factory=list)

    @property
    def margin(self) -> float:
        """Smallest slack of the chain; negative when it fails."""
        return min(self.mid + self.tol - self.lhs, self.rhs + self.tol - self.mid)

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def _boundary_mismatch(rho0: DensityField, rho1: DensityField) -> float:
    v0, v1 = rho0.values, rho1.values
    return float(max(abs(v0[0] - v1[0]), abs(v0[-1] - v1[-1])))


def hwi_check(rho0: DensityField, rho1: DensityField, nl: Nonlinearity) -> HwiResult:
    """F(rho0) - F(rho1) <= -int <grad f(rho0), map - z> dz <= sqrt(I(rho0)) W2."""
    _require_1d(rho0, rho1)
    if rho0.grid != rho1.grid:
        raise InputError("HWI pair must share one grid")
    warnings = []
    mismatch = _boundary_mismatch(rho0, rho1)
    if mismatch > BOUNDARY_MATCH_TOL:
        message = f"boundary values differ by {mismatch:.3g}"
        warnings.append(message)
        log.warning({"msg": "HWI boundary mismatch", "mismatch": mismatch})
    plan = build_plan(rho0, rho1)
    lhs = entropy_functional(rho0, nl) - entropy_functional(rho1, nl)
    grad_f = gradient_neumann(nl.f(rho0.values), rho0.grid)[0]
    mid = -integrate(grad_f * plan.displacement(), rho0.grid)
    g = grad_h(rho0, nl)
    rhs = _weighted_norm(g, rho0) * plan.w2
    tol = 1e-3 * (1.0 + abs(rhs))
    return HwiResult(
        lhs=lhs,
        mid=mid,
        rhs=rhs,
        tol=tol,
        w2=plan.w2,
        holds=bool(lhs <= mid + tol and mid <= rhs + tol),
        warnings=warnings,
    )


def random_density(grid: Grid, rng: np.random.Generator, modes: int = 3, spread: float = 0.6) -> DensityField:
    """1 + sum a_k sin(2 k pi s) sin^4(pi s), rescaled to mass 1.

    Every mode has zero mean and vanishes to fifth order at the ends, so all
    samples share their boundary values and stay above 1 - spread.
    """
    lo, hi = grid.extent[0]
    a = rng.uniform(-1.0, 1.0, modes)
    a *= spread * rng.uniform(0.2, 1.0) / np.sum(np.abs(a))

    def profile(x: Array) -> Array:
        s = (x - lo) / (hi - lo)
        bump = np.sin(np.pi * s) ** 4
        return (1.0 + sum(a[k] * np.sin(2 * (k + 1) * np.pi * s) * bump for k in range(modes))) / (hi - lo)

    return DensityField.from_function(grid, profile)


def random_hwi_pairs(grid: Grid, n_pairs: int, seed: int) -> list[tuple[DensityField, DensityField]]:
    if grid.dim != 1:
        raise DimensionError("random HWI pairs are 1-D")
    pairs = []
    for i in range(n_pairs):
        rng = np.random.default_rng([seed, i])
        pairs.append((random_density(grid, rng), random_density(grid, rng)))
    return pairs


def hwi_sweep(grid: Grid, nl: Nonlinearity, n_pairs: int, seed: int, n_workers: int = 1) -> list[HwiResult]:
    """HWI chain over seeded random pairs; each pair has its own seed."""
    pairs = random_hwi_pairs(grid, n_pairs, seed)
    with ThreadPoolExecutor(max_workers=max(1, n_workers)) as pool:
        return list(pool.map(lambda pair: hwi_check(pair[0], pair[1], nl), pairs))


def displacement_rate_check(
    plan: TransportPlan1D, nl: Nonlinearity, ts: Iterable[float] = (1e-2, 5e-3, 2.5e-3, 1.25e-3)
) -> dict[str, Any]:
    """(F(rho_t) - F(rho_0))/t along the geodesic against int <grad f(rho_0), map - z> dz."""
    rho0 = plan.source
    grad_f = gradient_neumann(nl.f(rho0.values), rho0.grid)[0]
    expected = integrate(grad_f * plan.displacement(), rho0.grid)
    f0 = entropy_functional(rho0, nl)
    ts = list(ts)
    ratios = [(entropy_functional(displacement_interpolation(plan, t), nl) - f0) / t for t in ts]
    errors = [abs(r - expected) for r in ratios]
    return {
        "expected": expected,
        "ts": ts,
        "ratios": ratios,
        "rel_error": errors[-1] / max(abs(expected), RATE_FLOOR),
        "abs_error": errors[-1],
        "converges": bool(np.all(np.diff(errors) <= 1e-12)),
    }


def displacement_convexity(plan: TransportPlan1D, nl: Nonlinearity, samples: int = 11) -> dict[str, Any]:
    ts = np.linspace(0.0, 1.0, samples)
    values = np.array([entropy_functional(displacement_interpolation(plan, t), nl) for t in ts])
    second = values[2:] - 2 * values[1:-1] + values[:-2]
    return {"ts": ts.tolist(), "entropy": values.tolist(), "min_second_difference": float(np.min(second))}


def geodesic_check(plan: TransportPlan1D, ts: Iterable[float] = (0.25, 0.5, 0.75)) -> dict[str, Any]:
    """W2(rho_0, rho_t) against t W2(rho_0, rho_1)."""
    rows = []
    for t in ts:
        rho_t = displacement_interpolation(plan, t)
        source = plan.source
        if rho_t.grid != source.grid:
            source = displacement_interpolation(plan, 0.0)
        rows.append({"t": t, "w2": w2_1d(source, rho_t), "expected": t * plan.w2})
    return {"rows": rows, "max_abs_error": max(abs(r["w2"] - r["expected"]) for r in rows)}


@dataclass
class FlowReport:
    t0: float
    t1: float
    l1_error: float
    monotone: bool | None
    clamped: int
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def _velocity(p: DensityField, nl: Nonlinearity, beta: Potential | None, points: Array) -> Array:
    """u = -(grad beta + grad h(p)) at points (n, dim)."""
    u = -_h_plus_beta(p, nl, beta)
    return np.stack([interpolate_values(u[a], p.grid, points) for a in range(p.grid.dim)], axis=-1)


def _clamp(points: Array, grid: Grid) -> tuple[Array, int]:
    clipped = np.clip(points, grid.lower, grid.upper)
    return clipped, int(np.count_nonzero(np.any(clipped != points, axis=-1)))


def velocity_and_flow_check(
    run: PdeRun,
    nl: Nonlinearity,
    beta: Potential | None,
    t0: float,
    t1: float,
    *,
    markers_per_cell: int = 4,
    dt: float | None = None,
) -> FlowReport:
    """Integrates dX/dt = u(t, X) with explicit Euler and compares the push-forward of p_t0 with p_t1.

    1-D: markers carry the CDF of p_t0, boundary markers stay on the walls.
    2-D: sub-cell markers carry cell masses and are binned onto the grid.
    """
    if not t0 < t1 <= run.horizon + 1e-12:
        raise InputError(f"need t0 < t1 <= {run.horizon}, got {t0}, {t1}")
    beta = run.beta if beta is None else beta
    grid = run.grid
    dt = run.dt if dt is None else dt
    n_steps = max(1, math.ceil((t1 - t0) / dt * (1 - 1e-12)))
    h = (t1 - t0) / n_steps
    p0 = run.field_at(t0)
    warnings: list[str] = []
    clamped = 0

    if grid.dim == 1:
        z = np.linspace(grid.extent[0][0], grid.extent[0][1], markers_per_cell * grid.n_cells[0] + 1)
        levels = cdf_function(p0, z)
        x = z.reshape(-1, 1)
        for k in range(n_steps):
            velocity = _velocity(run.field_at(t0 + k * h), nl, beta, x)
            velocity[[0, -1]] = 0.0
            x, hits = _clamp(x + h * velocity, grid)
            clamped += hits
        positions = x[:, 0]
        monotone = bool(np.all(np.diff(positions) > 0))
        if not monotone:
            warnings.append("flow map lost monotonicity")
            positions = np.maximum.accumulate(positions)
        pushed = np.interp(grid.faces(0), positions, levels)
        masses = np.diff(pushed)
    else:
        offsets = [(np.arange(markers_per_cell) + 0.5) / markers_per_cell * d for d in grid.dx]
        axes = [(grid.faces(a)[:-1, None] + offsets[a][None, :]).ravel() for a in range(grid.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        x = np.stack([m.ravel() for m in mesh], axis=-1)
        weights = interpolate_values(p0.values, grid, x)
        weights *= integrate(p0) / np.sum(weights)
        for k in range(n_steps):
            x, hits = _clamp(x + h * _velocity(run.field_at(t0 + k * h), nl, beta, x), grid)
            clamped += hits
        edges = [grid.faces(a) for a in range(grid.dim)]
        masses, _ = np.histogramdd(x, bins=edges, weights=weights)
        monotone = None
    if clamped:
        warnings.append(f"{clamped} marker positions clamped to the domain")
        log.warning({"msg": "flow clamped", "count": clamped})
    target = run.field_at(t1).values * grid.cell_volume
    return FlowReport(
        t0=t0,
        t1=t1,
        l1_error=float(np.sum(np.abs(masses - target))),
        monotone=monotone,
        clamped=clamped,
        warnings=warnings,
    )
