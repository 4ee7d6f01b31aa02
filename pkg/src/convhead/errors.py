"""Exception hierarchy shared by every convhead module."""


class ConvHeadError(Exception):
    """Base class for all errors raised by convhead."""


class InvalidInputError(ConvHeadError, ValueError):
    pass


class ShapeError(InvalidInputError):
    pass


class LayoutError(InvalidInputError):
    pass


class ConditioningError(InvalidInputError):
    pass


class FormatError(ConvHeadError):
    """A binary or JSON file does not follow its declared format."""


class ManifestError(InvalidInputError):
    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class ConfigError(ConvHeadError, ValueError):
    pass


class NumericError(ConvHeadError, ArithmeticError):
    pass
