"""Exception types shared across the package."""


class DDmixError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(DDmixError, ValueError):
    """Invalid argument or parameter combination."""


class ShapeError(DDmixError, ValueError):
    """Operand shapes do not conform."""


class NumericError(DDmixError, ArithmeticError):
    """Non-finite value or invalid numeric domain."""


class ParseError(DDmixError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateError(DDmixError, ValueError):
    """Metric undefined because only one class is present."""


class StateError(DDmixError, ValueError):
    """Optimizer state does not match the parameters it is applied to."""


class CorruptionError(DDmixError, IOError):
    """Stored payload does not match its manifest."""


class VersionError(DDmixError, ValueError):
    """Unknown on-disk format version."""


class CheckpointError(DDmixError, ValueError):
    """Checkpoint does not match the requested architecture."""


class DegenerateWarning(UserWarning):
    pass
