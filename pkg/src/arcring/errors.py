"""Exception types shared across the package."""


class ArcRingError(Exception):
    """Base class for all arcring errors."""


class DimensionMismatch(ArcRingError):
    pass


class CompositionNotZero(ArcRingError):
    pass


class ArityMismatch(ArcRingError):
    pass


class PlatformMismatch(ArcRingError):
    pass


class PlatformRangeViolation(ArcRingError):
    pass


class ParityMismatch(ArcRingError):
    pass


class CircleNotFound(ArcRingError):
    pass


class MalformedEventSequence(ArcRingError):
    pass


class RingMismatch(ArcRingError):
    pass


class MiddleMismatch(ArcRingError):
    pass


class IsomorphismFailure(ArcRingError):
    pass


class TangleSyntaxError(ArcRingError):
    """Parse error in the tangle text format; carries a line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StrandCountError(TangleSyntaxError):
    pass


class OrientationInconsistent(TangleSyntaxError):
    pass


class OrientationMissing(ArcRingError):
    pass


class NotAComplex(ArcRingError):
    pass


class NotClosed(ArcRingError):
    pass


class MoveNotApplicable(ArcRingError):
    pass


class InternalInvariantError(ArcRingError):
    """An internal consistency assertion failed (d*d != 0 and the like)."""
