"""Exception types shared across the package.

Most precondition violations raise ValueError subclasses so callers can
either catch the specific failure or treat everything as bad input.  The
CLI maps these onto exit codes.
"""


class HeiscapError(ValueError):
    """Base class for all package-specific errors."""


class DimensionError(HeiscapError):
    """Point arrays whose last axis is not 2n+1, or mixed group dimensions."""


class SingularityError(HeiscapError):
    """Evaluation of a gauge power or its gradient at (or too near) the pole."""


class DomainError(HeiscapError):
    """Invalid implicit domain or annulus geometry (e.g. origin outside)."""


class BracketError(HeiscapError):
    """A boundary ray failed to bracket a sign change of the defining function."""


class GridError(HeiscapError):
    """Grid construction or node classification failed an invariant."""


class ResampleRangeError(HeiscapError):
    """Interpolation was requested outside the source grid box."""


class CertificateError(HeiscapError):
    """Certification preconditions failed (no certified nodes, bad margin)."""


class EmptySurfaceError(HeiscapError):
    """Level-set extraction found no crossings in the certified region."""


class CheckpointError(HeiscapError):
    """Corrupt or inconsistent field checkpoint."""


class ConfigError(HeiscapError):
    """Malformed or contradictory run configuration."""


class ConvergenceError(RuntimeError):
    """Solver failed to reach the requested residual tolerance.

    Carries the partial report so callers can still inspect or save it.
    """

    def __init__(self, message, report=None, field=None):
        super().__init__(message)
        self.report = report
        self.field = field


class PostconditionError(RuntimeError):
    """A converged result violated a verified postcondition (e.g. bounds)."""
