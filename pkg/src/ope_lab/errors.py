"""Exception types shared across the package."""
from __future__ import annotations


class OpeLabError(Exception):
    pass


class InvalidProblemError(OpeLabError, ValueError):
    """Raised when an operation receives a problem that fails validation."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations[:5])
        more = "" if len(self.violations) <= 5 else f" (+{len(self.violations) - 5} more)"
        super().__init__(f"invalid problem: {lines}{more}")


class SupportError(OpeLabError, ValueError):
    """A visited (t, s, a) has zero probability under the sampling distribution."""

    def __init__(self, message: str, t: int | None = None, s: int | None = None, a: int | None = None):
        self.t, self.s, self.a = t, s, a
        super().__init__(f"{message} at (t={t}, s={s}, a={a})")


class EnumerationCapError(OpeLabError, RuntimeError):
    def __init__(self, needed: int, cap: int):
        self.needed, self.cap = needed, cap
        super().__init__(
            f"enumeration needs at least {needed} paths, above the cap of {cap}; "
            "use the moment DP instead or raise OPE_LAB_ENUM_CAP"
        )


class ConvergenceError(OpeLabError, RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        self.residual, self.iterations = residual, iterations
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")


class ConfigError(OpeLabError, ValueError):
    """A run configuration or problem document is malformed."""
