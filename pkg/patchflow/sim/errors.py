"""Exception hierarchy shared by the simulator modules."""

from __future__ import annotations


class PatchflowError(Exception):
    """Base class for every error raised by patchflow."""


class ConfigError(PatchflowError, ValueError):
    """Scenario file missing, malformed, or failing validation."""


class FieldError(PatchflowError, ValueError):
    """Grid field rejected: non-finite samples, wrong shape, asymmetric tensor."""


class LawError(PatchflowError, ValueError):
    """Constitutive law invalid, or a value outside the admissible band."""


class InterfaceError(PatchflowError, ValueError):
    """Self-intersecting curve or degenerate level set."""


class DiagnosticsError(PatchflowError, ValueError):
    """A diagnostic was asked for with too little data."""


class CheckpointError(PatchflowError, ValueError):
    """Checkpoint file with the wrong magic string or schema version."""


class InvalidStateError(PatchflowError, RuntimeError):
    """The run left the admissible state space (NaN, J <= 0, depletion, ...)."""


class BlowupError(InvalidStateError):
    """A blow-up monitor tripped; ``report`` holds the monitor values."""

    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = dict(report or {})


class SolveError(PatchflowError, RuntimeError):
    """Iterative elliptic solve failed to converge or stagnated."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
