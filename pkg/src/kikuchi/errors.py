"""Exception types shared across the package."""


class KikuchiError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(KikuchiError, ValueError):
    pass


class FormatError(KikuchiError, ValueError):
    """Malformed tensor file. ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ResourceLimitError(KikuchiError, RuntimeError):
    pass


class ConfigurationError(KikuchiError, ValueError):
    pass


class ConvergenceError(KikuchiError, RuntimeError):
    pass
