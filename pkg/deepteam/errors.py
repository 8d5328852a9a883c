"""
Exception hierarchy shared by the library, the CLI and the HTTP service.

Every error carries the process exit code the CLI reports for it:
2 for configuration/model problems, 3 for numerical failures.
"""
from typing import Optional


class DeepTeamError(Exception):
    """Base class for all deepteam errors."""
    exit_code: int = 1


class ConfigError(DeepTeamError):
    """Invalid experiment configuration or model file."""
    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        context = []
        if field:
            context.append(f"field '{field}'")
        if line is not None:
            context.append(f"line {line}")
        prefix = f"[{', '.join(context)}] " if context else ""
        super().__init__(f"{prefix}{message}")


class ModelError(DeepTeamError):
    """The team model itself is unusable."""
    exit_code = 2


class DimensionMismatch(ModelError):
    """A matrix block has the wrong shape."""

    def __init__(self, block: str, expected: Optional[tuple] = None, got: Optional[tuple] = None,
                 detail: Optional[str] = None):
        self.block = block
        self.expected = expected
        self.got = got
        super().__init__(f"{block}: {detail or f'expected shape {expected}, got {got}'}")


class InvalidModel(ModelError):
    """Model violates one or more invariants; carries the validation report."""

    def __init__(self, report):
        self.report = report
        lines = "; ".join(issue.message for issue in report.issues)
        super().__init__(f"model failed validation ({len(report.issues)} issue(s)): {lines}")


class NotWeaklyCoupled(ModelError):
    """Coupling terms mix features, so the per-feature decomposition does not apply."""


class NumericalError(DeepTeamError):
    """Solver, evaluation or simulation failed numerically."""
    exit_code = 3


class FeasibilityLost(NumericalError):
    """I - 2*lambda*W*P is no longer positive definite."""


class NoConvergence(NumericalError):
    """Fixed-point iteration hit its iteration cap."""


class UnstablePolicy(NumericalError):
    """A closed loop has spectral radius >= 1."""


class UnstableIterate(NumericalError):
    """An optimizer iterate left the stable/feasible set."""


class NumericOverflow(NumericalError):
    """Simulated state norm blew past the overflow threshold."""

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        super().__init__(message)


class MGFOverflow(NumericalError):
    """Exponential-of-cost samples span more than double precision can represent."""


class SingularCovariance(NumericalError):
    """A state-correlation block cannot be inverted."""


class TooManyUnstableSamples(NumericalError):
    """Too many perturbed rollouts overflowed to estimate a gradient."""


class GaugeIndexError(DeepTeamError, IndexError):
    """Sub-population, agent or feature index out of range."""
    exit_code = 2
