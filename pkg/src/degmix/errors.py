"""Exception types shared across the package."""


class DegmixError(Exception):
    """Base class for all package-specific errors."""


class InvalidDimension(DegmixError):
    """Basis dimension too small for the spline order."""


class InvalidDomain(DegmixError):
    """Nonpositive or otherwise unusable time domain / knot layout."""


class OutOfDomain(DegmixError):
    """Evaluation time outside the basis domain."""


class InvalidConfig(DegmixError):
    """Simulation configuration violates its own constraints."""


class ParseError(DegmixError):
    """Malformed CSV content; message carries the line number."""


class InconsistentLabel(DegmixError):
    """A unit appears with conflicting environment labels."""


class NonMonotoneTime(DegmixError):
    """Duplicate or non-increasing observation times within a unit."""


class IoError(DegmixError):
    """File could not be read or written."""


class SingularCovariance(DegmixError):
    """A covariance matrix required to be positive definite is not."""


class EmptyCluster(DegmixError):
    """A mixture component received (numerically) zero responsibility mass."""


class LengthMismatch(DegmixError):
    """Paired label vectors differ in length or are too short."""


class RejectionOverflow(DegmixError):
    """Bootstrap rejection loop exceeded its retry budget."""


class AllCensored(DegmixError):
    """Every residual-life draw was censored at the domain end."""


class InsufficientData(DegmixError):
    """Cross-validation folds cannot be formed from the given units."""


class InvalidTruth(DegmixError):
    """A true residual life or lifetime is nonpositive or missing."""


class NotConvergedWarning(UserWarning):
    """EM stopped at the iteration cap before meeting the tolerance."""
