"""Exception types shared across the package."""


class EvacsimError(Exception):
    """Base class for all package errors."""


class ScenarioError(EvacsimError):
    """Scenario file is malformed or violates a validation rule."""


class ParseError(ScenarioError):
    """Scenario file does not parse; message carries line/column."""


class ValidationError(ScenarioError):
    """Scenario parsed but violates rules; message lists every violation."""


class SpawnError(EvacsimError):
    """A non-overlapping spawn placement could not be found."""


class GraphError(EvacsimError):
    """Navigation graph is inconsistent (e.g. an exit unreachable from a room)."""


class NumericalBlowup(EvacsimError):
    """A coordinate became non-finite during integration."""


class DegenerateSeries(EvacsimError):
    """A jam-size series has fewer than two samples."""


class BatchError(EvacsimError):
    """A batch worker failed; carries the run label for diagnostics."""

    def __init__(self, label: str, cause: str):
        super().__init__(f"run {label} failed: {cause}")
        self.label = label
        self.cause = cause
