"""Entropy F(p) = int Phi(p), dissipation I(p) = int |grad h(p)|^2 p, and the
pointwise dissipation functions D and D^beta used by the particle decomposition.
"""

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import numpy.typing as npt
import pandas as pd
from scipy.integrate import cumulative_trapezoid

from .errors import DomainError, InputError
from .grid import DensityField, flux_divergence, gradient_neumann, integrate, laplacian_neumann
from .nonlinearity import Nonlinearity
from .pde import PdeRun, beta_face_gradients, total_fluxes
from .potential import Potential

log = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]

MONOTONE_SLACK = 1e-10
RELATIVE_FLOOR = 1e-12


def _positive(p: DensityField) -> Array:
    if not np.all(p.values > 0):
        raise DomainError("entropy quantities need a strictly positive density")
    return p.values


def entropy_functional(p: DensityField, nl: Nonlinearity) -> float:
    return integrate(nl.Phi(_positive(p)), p.grid)


def differential_entropy(p: DensityField) -> float:
    """H(p) = int p log p; for the linear kind F(p) = H(p) - 1."""
    values = _positive(p)
    return integrate(values * np.log(values), p.grid)


def grad_h(p: DensityField, nl: Nonlinearity) -> Array:
    """grad h(p) = Phi''(p) grad p, shape (dim, *grid.shape)."""
    values = _positive(p)
    return nl.Phi_second(values) * gradient_neumann(p)


def dissipation_functional(p: DensityField, nl: Nonlinearity) -> float:
    gh = grad_h(p, nl)
    return integrate(np.sum(gh**2, axis=0) * p.values, p.grid)


def cross_term(p: DensityField, nl: Nonlinearity, beta: Potential) -> float:
    """int <grad h(p), grad beta> p."""
    inner = np.sum(grad_h(p, nl) * beta.cell_gradient(p.grid), axis=0)
    return integrate(inner * p.values, p.grid)


def _dissipation(p: DensityField, nl: Nonlinearity, beta: Potential | None) -> Array:
    values = _positive(p)
    grid = p.grid
    faces = beta_face_gradients(grid, beta) if beta is not None else None
    # same face fluxes as the solver, so D matches the discrete time derivative
    div = flux_divergence(total_fluxes(values, nl, grid, faces), grid)
    v = nl.pressure(values)
    out = nl.pressure_prime(values) * div + nl.f(values) / values * laplacian_neumann(v, grid)
    if beta is not None:
        out = out - np.sum(gradient_neumann(v, grid) * beta.cell_gradient(grid), axis=0)
    return out


def dissipation_field(p: DensityField, nl: Nonlinearity) -> Array:
    """D = phi'(p) lap f(p) + (f(p)/p) lap v, v = phi(p)."""
    return _dissipation(p, nl, None)


def perturbed_dissipation_field(p: DensityField, nl: Nonlinearity, beta: Potential) -> Array:
    """D^beta = phi'(p) div(grad f(p) + p grad beta) + (f(p)/p) lap v - <grad v, grad beta>."""
    return _dissipation(p, nl, beta)


def mean_dissipation(p: DensityField, nl: Nonlinearity, beta: Potential | None = None) -> float:
    """int D p, which should equal -I(p) (minus the cross term when perturbed)."""
    return integrate(_dissipation(p, nl, beta) * p.values, p.grid)


@dataclass
class IdentityReport:
    times: Array
    lhs: Array
    rhs: Array
    dissipation: Array
    cross_term_series: Array | None = None
    entropy: Array = field(default_factory=lambda: np.empty(0))

    def __post_init__(self) -> None:
        n = len(self.times)
        arrays = [self.lhs, self.rhs, self.dissipation]
        if self.cross_term_series is not None:
            arrays.append(self.cross_term_series)
        if any(len(a) != n for a in arrays):
            raise InputError("identity report arrays must share their length")

    @property
    def abs_residual(self) -> Array:
        return np.abs(self.lhs - self.rhs)

    @property
    def rel_residual(self) -> Array:
        scale = np.maximum(np.abs(self.lhs), RELATIVE_FLOOR)
        return self.abs_residual / scale

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.entropy) <= MONOTONE_SLACK))

    @property
    def perturbed(self) -> bool:
        return self.cross_term_series is not None

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "t": self.times,
                "lhs": self.lhs,
                "rhs": self.rhs,
                "residual": self.abs_residual,
                "rel_residual": self.rel_residual,
                "entropy": self.entropy,
                "dissipation": self.dissipation,
            }
        )
        if self.cross_term_series is not None:
            frame["cross_term"] = self.cross_term_series
        return frame

    def summary(self) -> dict[str, Any]:
        rel = self.rel_residual[1:]
        return {
            "max_rel_residual": float(np.max(rel)),
            "final_rel_residual": float(self.rel_residual[-1]),
            "max_abs_residual": float(np.max(self.abs_residual)),
            "monotone": self.monotone,
            "perturbed": self.perturbed,
        }


def verify_identity(run: PdeRun, nl: Nonlinearity, beta: Potential | None = None) -> IdentityReport:
    """F(p_t) - F(p_t0) against -int (I + cross term) by the trapezoidal rule."""
    if len(run.snapshots) < 3:
        raise InputError("identity check needs at least 3 snapshots")
    beta = beta if beta is not None else run.beta
    times = run.times
    entropy = np.array([entropy_functional(s, nl) for s in run.snapshots])
    dissipation = np.array([dissipation_functional(s, nl) for s in run.snapshots])
    cross = None
    integrand = dissipation
    if beta is not None:
        cross = np.array([cross_term(s, nl, beta) for s in run.snapshots])
        integrand = dissipation + cross
    rhs = -cumulative_trapezoid(integrand, times, initial=0.0)
    report = IdentityReport(
        times=times,
        lhs=entropy - entropy[0],
        rhs=rhs,
        dissipation=dissipation,
        cross_term_series=cross,
        entropy=entropy,
    )
    log.info({"msg": "identity", **report.summary()})
    return report


def entropy_rate_check(run: PdeRun, nl: Nonlinearity, t0: float | None = None, lag: int = 1) -> dict[str, float]:
    """Two-point slope of F at t0 against -I(p_t0) - cross term."""
    k0 = run.index_of(run.t_start if t0 is None else t0)
    k1 = k0 + lag
    if k1 >= len(run.snapshots):
        raise InputError("run too short for the requested lag")
    s0, s1 = run.snapshots[k0], run.snapshots[k1]
    slope = (entropy_functional(s1, nl) - entropy_functional(s0, nl)) / (s1.time_tag - s0.time_tag)
    expected = -dissipation_functional(s0, nl)
    if run.beta is not None:
        expected -= cross_term(s0, nl, run.beta)
    return {
        "t0": s0.time_tag,
        "spacing": s1.time_tag - s0.time_tag,
        "finite_difference": slope,
        "expected": expected,
        "rel_error": abs(slope - expected) / max(abs(expected), RELATIVE_FLOOR),
    }


def mean_dissipation_check(run: PdeRun, nl: Nonlinearity) -> pd.DataFrame:
    """int D p against -(I + cross) on every snapshot."""
    rows = []
    for s in run.snapshots:
        expected = -dissipation_functional(s, nl)
        if run.beta is not None:
            expected -= cross_term(s, nl, run.beta)
        got = mean_dissipation(s, nl, run.beta)
        rows.append(
            {
                "t": s.time_tag,
                "mean_dissipation": got,
                "expected": expected,
                "rel_error": abs(got - expected) / max(abs(expected), RELATIVE_FLOOR),
            }
        )
    return pd.DataFrame(rows)
