"""Exception hierarchy shared across the package."""


class FmriSRError(Exception):
    """Base class for all errors raised by fmrisr."""


class InvalidArgumentError(FmriSRError, ValueError):
    pass


class ShapeError(FmriSRError, ValueError):
    pass


class DegenerateInputError(FmriSRError, ValueError):
    pass


class ConfigError(FmriSRError, ValueError):
    pass


class FormatError(FmriSRError, ValueError):
    pass


class ConsistencyError(FormatError):
    """Checkpoint metadata disagrees with its payload."""


class NumericError(FmriSRError, ArithmeticError):
    pass


class DesignError(FmriSRError, ValueError):
    pass
