"""Exception types shared across the package."""


class CmmixError(Exception):
    """Base class for all package-specific errors."""


class UnknownColumn(CmmixError):
    pass


class OutOfRangeLevel(CmmixError):
    pass


class MissingFixedValue(CmmixError):
    pass


class NonNumericContinuous(CmmixError):
    pass


class UnresolvedMissing(CmmixError):
    pass


class ZeroRange(CmmixError):
    pass


class InitFailure(CmmixError):
    pass


class SingularPrecision(CmmixError):
    pass


class NonPDScale(CmmixError):
    pass


class EmptyNeighborhood(CmmixError):
    pass


class EmptyInterval(CmmixError):
    """Interval intersection for a location update came out empty.

    Indicates internal inconsistency: the current location satisfies every
    member constraint, so a valid update can never produce this.
    """


class NoDonor(CmmixError):
    pass


class TooFewDraws(CmmixError):
    pass


class ConfigError(CmmixError):
    pass
