"""Exception hierarchy shared by every module."""


class M2MError(Exception):
    """Base class for all library errors."""


class ZeroNorm(M2MError, ValueError):
    pass


class NonFinite(M2MError, ArithmeticError):
    pass


class ShapeMismatch(M2MError, ValueError):
    pass


class SizeMismatch(ShapeMismatch):
    pass


class TokenOutOfRange(M2MError, ValueError):
    pass


class SequenceTooLong(M2MError, ValueError):
    pass


class TemperatureNonPositive(M2MError, ValueError):
    pass


class PlanOutOfRange(M2MError, ValueError):
    pass


class CardinalityMismatch(M2MError, ValueError):
    pass


class PlanCardinality(CardinalityMismatch):
    pass


class TooFewTexts(M2MError, ValueError):
    pass


class UnsupportedView(M2MError, ValueError):
    pass


class ParseError(M2MError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TextTooLong(ParseError):
    pass


class MissingImage(M2MError, FileNotFoundError):
    def __init__(self, path):
        super().__init__(f"missing image: {path}")
        self.path = path


class DataIOError(M2MError, OSError):
    pass


class CorruptCheckpoint(M2MError, ValueError):
    pass


class MissingGalleryStats(M2MError, ValueError):
    pass


class EmptySubset(M2MError, ValueError):
    pass


class BranchOutOfRange(M2MError, IndexError):
    pass


class UsageError(M2MError):
    pass
