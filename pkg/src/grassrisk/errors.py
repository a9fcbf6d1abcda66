"""Exception hierarchy.

Errors split into two families so the command line can map them to exit
codes: `ValidationError` for bad inputs (exit 2) and `NumericalError` for
computations that could not be completed (exit 3).
"""


class GrassriskError(Exception):
    """Base class for all library errors."""


class ValidationError(GrassriskError, ValueError):
    """Input rejected before or during computation."""


class NumericalError(GrassriskError, ArithmeticError):
    """A numerical procedure failed or left its domain."""


class RankDeficient(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class AnchorMismatch(ValidationError):
    pass


class NotOrthogonalComplement(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class NotMinimizer(ValidationError):
    pass


class AngleTooLarge(ValidationError):
    pass


class EmptyData(ValidationError):
    pass


class NoEigengap(ValidationError):
    pass


class InvalidP(ValidationError):
    pass


class InvalidSpike(ValidationError):
    pass


class EigenbasisMismatch(ValidationError):
    pass


class DeltaOutOfRange(ValidationError):
    pass


class NotPSD(ValidationError):
    pass


class InvalidGraph(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class IoError(ValidationError, OSError):
    pass


class CutLocus(NumericalError):
    """Second subspace is (numerically) orthogonal to some direction of the first."""


class DegenerateSpectrum(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass
