"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes or image extents do not satisfy an operation's contract."""


class EmptyInputError(ValueError):
    """An operation that needs at least one element received none."""


class DegenerateError(ValueError):
    """Input carries no usable information (all-zero mask, no valid pixels)."""


class DomainError(ValueError):
    """A value lies outside the mathematical domain of the requested metric."""


class ContractError(ValueError):
    """A caller-supplied callable broke the expected contract."""


class ConfigError(ValueError):
    """Invalid training or generation configuration."""


class FormatError(IOError):
    """A file on disk does not match the expected binary or text layout."""

    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class HeaderError(FormatError):
    pass


class PayloadLengthError(FormatError):
    pass


class MagicError(FormatError):
    pass


class ShapeError(FormatError):
    pass


class DepthRangeError(FormatError):
    pass


class MissingFileError(FormatError):
    pass
