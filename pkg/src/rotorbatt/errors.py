"""Exception hierarchy.

Every error carries a stable ``code`` string (used by the CLI for
machine-readable diagnostics) and an ``exit_code`` hint: 2 for input or
configuration problems, 1 for runtime failures.
"""

from __future__ import annotations


class RotorbattError(Exception):
    code = "error"
    exit_code = 1

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context

    def to_dict(self) -> dict:
        return {"code": self.code, "message": str(self), **self.context}


class InputError(RotorbattError):
    """Bad user input: files, config values, argument combinations."""

    code = "input"
    exit_code = 2


class ParseError(InputError):
    """Malformed log or table file; carries the offending row when known."""

    code = "parse"

    def __init__(self, message: str, row: int | None = None, **context):
        if row is not None:
            context["row"] = row
        super().__init__(message, **context)
        self.row = row


class DomainError(InputError):
    """Value outside a physical or tabulated domain."""

    code = "domain"


class KineticsError(RotorbattError):
    """Surface concentration out of the kinetic window; rejects the step."""

    code = "kinetics"


class StepFailureError(RotorbattError):
    """Newton iteration failed to converge; carries the residual norm."""

    code = "step_failure"

    def __init__(self, message: str, residual_norm: float | None = None, **context):
        if residual_norm is not None:
            context["residual_norm"] = residual_norm
        super().__init__(message, **context)
        self.residual_norm = residual_norm


class SimulationError(RotorbattError):
    """Unrecoverable failure while integrating a profile."""

    code = "simulation"

    def __init__(self, message: str, time_s: float | None = None, **context):
        if time_s is not None:
            context["time_s"] = time_s
        super().__init__(message, **context)
        self.time_s = time_s


class CalibrationError(RotorbattError):
    code = "calibration"


class NormalizationError(RotorbattError):
    """Baseline prediction nonpositive; metric must be reported raw."""

    code = "normalization"
