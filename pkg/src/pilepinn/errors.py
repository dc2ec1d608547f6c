"""Exception hierarchy shared by every module of the package."""


class PilePinnError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PilePinnError):
    """Invalid user configuration (layer sizes, config file values, ...)."""


class ShapeError(PilePinnError, ValueError):
    """Array dimensions do not match what an operation expects."""


class MaterialError(PilePinnError, ValueError):
    """Elastic constants outside the admissible range."""


class GeometryError(PilePinnError, ValueError):
    """Degenerate regions, non-unit normals or points outside the domain."""


class AssemblyError(PilePinnError):
    """A loss term cannot be formed, usually because it has no support points."""


class DataError(PilePinnError, ValueError):
    """Observed data inconsistent with the problem geometry."""


class NumericalError(PilePinnError, FloatingPointError):
    """A non-finite value appeared; ``term`` names the offending quantity."""

    def __init__(self, message: str, term: str | None = None):
        super().__init__(message)
        self.term = term


class OracleSetupError(PilePinnError):
    """The reference finite-difference system could not be solved."""


class TrainingDiverged(PilePinnError):
    """Raised by the trainer when the normalized loss blows up.

    The partial training record is attached so callers can still export it.
    """

    def __init__(self, message: str, record=None):
        super().__init__(message)
        self.record = record
