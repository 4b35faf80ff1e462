"""The nonlinearity f of the diffusion and the scalar functions derived from it.

    h(u)   = int_1^u f'(s)/s ds
    Phi(u) = int_0^u h(s) ds
    phi(u) = Phi(u)/u                  (pressure)
    sigma(u) = sqrt(2 f(u)/u)          (diffusion coefficient of the particles)

Porous medium and linear kinds use closed forms. Custom kinds integrate h
with adaptive Gauss-Kronrod quadrature and derive Phi from the exact
identity Phi(u) = u h(u) - f(u), valid because f(0) = 0.
"""

import logging
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable

import numpy as np
import numpy.typing as npt
from scipy import integrate

from .errors import DomainError, InputError, IntegrationError

log = logging.getLogger(__name__)

Scalar = float | npt.NDArray[np.float64]
ScalarFn = Callable[[float], float]


class Kind(str, Enum):
    POROUS_MEDIUM = "porous_medium"
    LINEAR = "linear"
    CUSTOM = "custom"


def _as_array(u: Any) -> npt.NDArray[np.float64]:
    return np.asarray(u, dtype=np.float64)


def _require_positive(u: npt.NDArray[np.float64], what: str) -> None:
    if not np.all(u > 0):
        raise DomainError(f"{what} needs u > 0, got min {np.min(u)!r}")


def _require_nonnegative(u: npt.NDArray[np.float64], what: str) -> None:
    if not np.all(u >= 0):
        raise DomainError(f"{what} needs u >= 0, got min {np.min(u)!r}")


def _like(u: Any, out: npt.NDArray[np.float64]) -> Scalar:
    return float(out) if np.ndim(u) == 0 else out


@dataclass(frozen=True)
class Nonlinearity:
    kind: Kind
    m: float | None = None
    f_custom: ScalarFn | None = None
    fprime_custom: ScalarFn | None = None
    quadrature_tol: float = 1e-10
    check_range: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.kind is Kind.POROUS_MEDIUM:
            if self.m is None or not self.m > 1:
                raise InputError(f"porous medium exponent must exceed 1, got {self.m!r}")
        elif self.kind is Kind.CUSTOM:
            if self.f_custom is None or self.fprime_custom is None:
                raise InputError("custom nonlinearity needs both f and f'")
            if abs(self.f_custom(0.0)) > 1e-12:
                raise InputError("custom nonlinearity must satisfy f(0) = 0")
            if self.check_range is not None:
                self._check_monotone(*self.check_range)
        if not self.quadrature_tol > 0:
            raise InputError("quadrature_tol must be positive")

    @classmethod
    def porous_medium(cls, m: float) -> "Nonlinearity":
        return cls(kind=Kind.POROUS_MEDIUM, m=float(m))

    @classmethod
    def linear(cls) -> "Nonlinearity":
        return cls(kind=Kind.LINEAR)

    @classmethod
    def custom(
        cls,
        f: ScalarFn,
        fprime: ScalarFn,
        *,
        quadrature_tol: float = 1e-10,
        check_range: tuple[float, float] | None = (0.05, 10.0),
    ) -> "Nonlinearity":
        return cls(
            kind=Kind.CUSTOM,
            f_custom=f,
            fprime_custom=fprime,
            quadrature_tol=quadrature_tol,
            check_range=check_range,
        )

    def _check_monotone(self, lo: float, hi: float, samples: int = 257) -> None:
        u = np.linspace(lo, hi, samples)
        fu = self.f(u)
        dfu = self.fprime(u)
        if not np.all(np.diff(fu) > 0):
            raise InputError(f"f is not strictly increasing on [{lo}, {hi}]")
        slack = 1e-12 * max(1.0, float(np.max(np.abs(dfu))))
        if not np.all(np.diff(dfu) >= -slack):
            raise InputError(f"f' is not nondecreasing on [{lo}, {hi}]")
        if not np.all(dfu > 0):
            raise InputError(f"f' vanishes inside [{lo}, {hi}]")

    def to_dict(self) -> dict[str, Any]:
        if self.kind is Kind.POROUS_MEDIUM:
            return {"kind": self.kind.value, "m": self.m}
        return {"kind": self.kind.value}

    # Pointwise evaluations. Arguments are arrays; domain checks are done by
    # the module-level eval_* functions and by the field code that calls these.

    def f(self, u: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        u = _as_array(u)
        if self.kind is Kind.POROUS_MEDIUM:
            return u**self.m
        if self.kind is Kind.LINEAR:
            return u.copy()
        return np.vectorize(self.f_custom, otypes=[np.float64])(u)

    def fprime(self, u: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        u = _as_array(u)
        if self.kind is Kind.POROUS_MEDIUM:
            return self.m * u ** (self.m - 1.0)
        if self.kind is Kind.LINEAR:
            return np.ones_like(u)
        return np.vectorize(self.fprime_custom, otypes=[np.float64])(u)

    def h(self, u: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        u = _as_array(u)
        if self.kind is Kind.POROUS_MEDIUM:
            m = self.m
            return m / (m - 1.0) * (u ** (m - 1.0) - 1.0)
        if self.kind is Kind.LINEAR:
            return np.log(u)
        return np.vectorize(self._h_quad, otypes=[np.float64])(u)

    def _h_quad(self, u: float) -> float:
        fprime = self.fprime_custom
        tol = self.quadrature_tol
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                value, abserr = integrate.quad(
                    lambda s: fprime(s) / s, 1.0, u, epsabs=tol, epsrel=tol, limit=200
                )
            except integrate.IntegrationWarning as exc:
                raise IntegrationError(f"h({u!r}): {exc}") from exc
        if not np.isfinite(value) or abserr > max(tol, tol * abs(value)):
            raise IntegrationError(
                f"h({u!r}) quadrature error {abserr:.3g} exceeds tolerance {tol:.3g}"
            )
        return value

    def Phi(self, u: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        u = _as_array(u)
        if self.kind is Kind.POROUS_MEDIUM:
            m = self.m
            return u**m / (m - 1.0) - m * u / (m - 1.0)
        positive = u > 0
        safe = np.where(positive, u, 1.0)
        if self.kind is Kind.LINEAR:
            return np.where(positive, safe * np.log(safe) - safe, 0.0)
        return np.where(positive, safe * self.h(safe) - self.f(safe), 0.0)

    def pressure(self, u: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        u = _as_array(u)
        if self.kind is Kind.POROUS_MEDIUM:
            m = self.m
            return u ** (m - 1.0) / (m - 1.0) - m / (m - 1.0)
        if self.kind is Kind.LINEAR:
            return np.log(u) - 1.0
        return self.h(u) - self.f(u) / u

    def pressure_prime(self, u: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        u = _as_array(u)
        if self.kind is Kind.POROUS_MEDIUM:
            return u ** (self.m - 2.0)
        if self.kind is Kind.LINEAR:
            return 1.0 / u
        # h = phi' u + phi
        return (self.h(u) - self.pressure(u)) / u

    def pressure_second(self, u: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        u = _as_array(u)
        if self.kind is Kind.POROUS_MEDIUM:
            return (self.m - 2.0) * u ** (self.m - 3.0)
        if self.kind is Kind.LINEAR:
            return -1.0 / u**2
        # Phi'' = phi'' u + 2 phi'
        return (self.Phi_second(u) - 2.0 * self.pressure_prime(u)) / u

    def Phi_second(self, u: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        """Phi'' = h' = f'(u)/u."""
        u = _as_array(u)
        if self.kind is Kind.POROUS_MEDIUM:
            return self.m * u ** (self.m - 2.0)
        if self.kind is Kind.LINEAR:
            return 1.0 / u
        return self.fprime(u) / u

    def diffusion_coeff(self, u: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        u = _as_array(u)
        if self.kind is Kind.POROUS_MEDIUM:
            return np.sqrt(2.0 * u ** (self.m - 1.0))
        if self.kind is Kind.LINEAR:
            return np.full_like(u, np.sqrt(2.0))
        return np.sqrt(2.0 * self.f(u) / u)


def eval_f(nl: Nonlinearity, u: Any) -> Scalar:
    arr = _as_array(u)
    _require_nonnegative(arr, "f")
    return _like(u, nl.f(arr))


def eval_fprime(nl: Nonlinearity, u: Any) -> Scalar:
    arr = _as_array(u)
    _require_nonnegative(arr, "f'")
    return _like(u, nl.fprime(arr))


def eval_h(nl: Nonlinearity, u: Any) -> Scalar:
    arr = _as_array(u)
    _require_positive(arr, "h")
    return _like(u, nl.h(arr))


def eval_Phi(nl: Nonlinearity, u: Any) -> Scalar:
    arr = _as_array(u)
    _require_nonnegative(arr, "Phi")
    return _like(u, nl.Phi(arr))


def eval_pressure(nl: Nonlinearity, u: Any) -> Scalar:
    arr = _as_array(u)
    _require_positive(arr, "pressure")
    return _like(u, nl.pressure(arr))


def eval_pressure_prime(nl: Nonlinearity, u: Any) -> Scalar:
    arr = _as_array(u)
    _require_positive(arr, "pressure'")
    return _like(u, nl.pressure_prime(arr))


def eval_pressure_second(nl: Nonlinearity, u: Any) -> Scalar:
    arr = _as_array(u)
    _require_positive(arr, "pressure''")
    return _like(u, nl.pressure_second(arr))


def eval_Phi_second(nl: Nonlinearity, u: Any) -> Scalar:
    arr = _as_array(u)
    _require_positive(arr, "Phi''")
    return _like(u, nl.Phi_second(arr))


def diffusion_coeff(nl: Nonlinearity, u: Any) -> Scalar:
    arr = _as_array(u)
    if nl.kind is Kind.POROUS_MEDIUM:
        # continuous extension sigma(0) = 0
        _require_nonnegative(arr, "diffusion_coeff")
    else:
        _require_positive(arr, "diffusion_coeff")
    return _like(u, nl.diffusion_coeff(arr))


def from_spec(spec: dict[str, Any]) -> Nonlinearity:
    """Builds a Nonlinearity from its config declaration."""
    kind = spec.get("kind")
    if kind == Kind.POROUS_MEDIUM.value:
        return Nonlinearity.porous_medium(spec["m"])
    if kind == Kind.LINEAR.value:
        return Nonlinearity.linear()
    raise InputError(f"nonlinearity kind {kind!r} cannot be declared in a config")
