"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`CompAugError`,
which is itself a ``ValueError`` so callers that only care about "bad input"
can catch that.
"""


class CompAugError(ValueError):
    pass


# core types / serialization
class NonFinite(CompAugError):
    pass


class ShapeMismatch(CompAugError):
    pass


class BadSamplingRate(CompAugError):
    pass


class MalformedInput(CompAugError):
    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)


# transforms
class BadBand(CompAugError):
    pass


class NegativeAlpha(CompAugError):
    pass


class BadRange(CompAugError):
    pass


class BadChannel(CompAugError):
    pass


class BadConfig(CompAugError):
    pass


# model
class BadLabel(CompAugError):
    pass


class EmptyDataset(CompAugError):
    pass


class DivergedLoss(ArithmeticError):
    """Training produced a non-finite loss; a computational failure, not bad input."""


# pipelines
class TooManyVariants(CompAugError):
    def __init__(self, requested, limit, what="variants"):
        self.requested = requested
        self.limit = limit
        super().__init__(f"{what}={requested} exceeds the admissible limit {limit}")


class ForeignTransform(CompAugError):
    pass


# data
class ParseError(CompAugError):
    def __init__(self, message, file=None, line=None, col=None):
        self.file, self.line, self.col = file, line, col
        where = ":".join(str(p) for p in (file, line, col) if p is not None)
        super().__init__(f"{where}: {message}" if where else message)


class LabelMismatch(CompAugError):
    pass


class WindowTooLong(CompAugError):
    pass


class TooFewSubjects(CompAugError):
    pass


class BadSpec(CompAugError):
    pass


# metrics
class LengthMismatch(CompAugError):
    pass
