import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Iterator

from ..errors import EntroflowError

__all__ = ["Check", "Verdict", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1

PASS, FAIL, SKIPPED = "pass", "fail", "skipped"


def _finite(x: float | None) -> float | None:
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass
class Check:
    name: str
    equation: str
    status: str
    metric: float | None = None
    tolerance: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "equation": self.equation,
            "status": self.status,
            "metric": _finite(self.metric),
            "tolerance": _finite(self.tolerance),
        }


@dataclass
class Verdict:
    checks: dict[str, Check] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def add(self, check: Check) -> Check:
        if check.status == PASS and check.metric is not None and not math.isfinite(check.metric):
            check.status = FAIL
        self.checks[check.name] = check
        level = logging.WARNING if check.status == FAIL else logging.INFO
        logging.log(level, {"msg": "check", "name": check.name, "status": check.status, "metric": check.metric})
        return check

    def within(self, name: str, equation: str, metric: float, tolerance: float, extra: bool = True) -> Check:
        """Passes when metric <= tolerance and `extra` holds."""
        passed = bool(metric <= tolerance) and extra
        return self.add(Check(name, equation, PASS if passed else FAIL, metric, tolerance))

    def judged(self, name: str, equation: str, passed: bool, metric: float | None, tolerance: float | None) -> Check:
        return self.add(Check(name, equation, PASS if passed else FAIL, metric, tolerance))

    def skip(self, name: str, equation: str, reason: str | None = None) -> Check:
        if reason:
            logging.info({"msg": "skipped", "name": name, "reason": reason})
        return self.add(Check(name, equation, SKIPPED))

    def fail(self, name: str, equation: str, reason: str) -> Check:
        self.warnings.append(f"{name}: {reason}")
        return self.add(Check(name, equation, FAIL))

    @contextmanager
    def guard(self, name: str, equation: str) -> Iterator[None]:
        """Turns a numerical error inside a check into a failed check."""
        try:
            yield
        except EntroflowError as exc:
            logging.warning({"msg": "check raised", "name": name, "error": repr(exc)})
            self.fail(name, equation, str(exc))

    @property
    def failed(self) -> list[str]:
        return sorted(name for name, c in self.checks.items() if c.status == FAIL)

    @property
    def exit_code(self) -> int:
        return 1 if self.failed else 0

    def statuses(self) -> dict[str, str]:
        return {name: c.status for name, c in self.checks.items()}

    def to_json(self, **extra: Any) -> dict[str, Any]:
        return {
            "schema": SCHEMA_VERSION,
            "status": FAIL if self.failed else PASS,
            "checks": {name: c.to_dict() for name, c in self.checks.items()},
            "warnings": list(self.warnings),
            **extra,
        }
