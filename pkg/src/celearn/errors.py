"""Exception hierarchy shared by all modules."""


class CELearnError(Exception):
    """Base class for package errors."""


class DimensionMismatch(CELearnError, ValueError):
    pass


class InfeasibleAllocation(CELearnError, ValueError):
    pass


class IncompatibleMarkets(CELearnError, ValueError):
    pass


class EmptyIndexSet(CELearnError, ValueError):
    pass


class InvalidMarket(CELearnError, ValueError):
    pass


class TooManyGoods(CELearnError, ValueError):
    """Raised when a dense or exact computation exceeds its goods cap."""


class EnumerationTooLarge(TooManyGoods):
    pass


class InvalidDistinct(CELearnError, ValueError):
    pass


class DomainError(CELearnError, ValueError):
    pass


class InvalidSchedule(CELearnError, ValueError):
    pass


class ParseError(CELearnError, ValueError):
    pass


class SchemaViolation(CELearnError, ValueError):
    def __init__(self, message, record=None):
        super().__init__(message if record is None else f"{message}: {record!r}")
        self.record = record


class NotWelfareMaximizing(CELearnError, ValueError):
    pass


class LPNumericalFailure(CELearnError, RuntimeError):
    pass
