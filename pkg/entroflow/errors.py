class EntroflowError(Exception):
    """Base class of every error raised by entroflow."""


class DomainError(EntroflowError, ValueError):
    """Argument outside the domain where a quantity is defined."""


class IntegrationError(EntroflowError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""


class StepSizeError(EntroflowError):
    """Time step too large for the stability or reflection constraint."""


class StabilityError(EntroflowError):
    """Explicit update produced a nonpositive density."""


class BoundsError(EntroflowError):
    """Density left the interval guaranteed by the comparison principle."""


class InputError(EntroflowError, ValueError):
    pass


class DimensionError(EntroflowError, ValueError):
    pass


class SingularDirectionError(EntroflowError, ArithmeticError):
    """Perturbed descent direction has vanishing norm."""


class ContractError(EntroflowError):
    """Caller broke a calling convention, e.g. reused a noise increment."""


class ConfigError(EntroflowError):
    def __init__(self, message: str, diagnostics: list[str] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []

    def __str__(self) -> str:
        if not self.diagnostics:
            return super().__str__()
        return "\n".join([super().__str__(), *(f"  {d}" for d in self.diagnostics)])
