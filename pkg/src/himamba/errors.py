"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes are inconsistent."""


class ParameterError(ValueError):
    """An operator argument (stride, padding, scale, ...) is invalid."""


class InputError(ValueError):
    """User-supplied data cannot be processed (too small, empty, ...)."""


class ContractError(RuntimeError):
    """An API precondition that is not about shapes was violated."""


class FormatError(ValueError):
    """A weight file is malformed.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
