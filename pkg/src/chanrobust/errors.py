"""Exception hierarchy shared by every stage of the pipeline."""


class ChanRobustError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ChanRobustError, ValueError):
    """Bad user input: configuration, arguments, or file contents."""


class MalformedWav(ValidationError):
    pass


class UnsupportedFormat(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, lineno=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.lineno = lineno
        self.path = path


class DuplicateTrial(ValidationError):
    pass


class TooShort(ValidationError):
    pass


class RateMismatch(ValidationError):
    pass


class InfeasibleSpec(ValidationError):
    pass


class DuplicateChannelId(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class DegenerateEmbedding(ChanRobustError, ArithmeticError):
    pass


class LabelOutOfRange(ValidationError):
    pass


class MissingChannel(ValidationError):
    pass


class MissingFeature(ChanRobustError, KeyError):
    pass


class NonFiniteLoss(ChanRobustError, ArithmeticError):
    pass


class EmptyDev(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class OneClassOnly(ValidationError):
    pass


class DomainError(ValidationError):
    pass
