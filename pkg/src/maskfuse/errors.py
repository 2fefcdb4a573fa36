"""Exception hierarchy shared by every maskfuse module."""


class MaskfuseError(Exception):
    """Base class; the CLI maps any subclass to a structured nonzero exit."""


class ConfigurationError(MaskfuseError, ValueError):
    """A size, ratio or hyperparameter is incompatible with the pipeline."""


class ValidationError(MaskfuseError, ValueError):
    """An input array has the wrong shape, dtype range or content."""


class NumericError(MaskfuseError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ParseError(MaskfuseError, ValueError):
    """Malformed file contents; ``offset`` is the byte where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(MaskfuseError, ValueError):
    """Checkpoint manifest does not match the model being restored."""
