"""Exception hierarchy shared by all modules."""


class HJBarrierError(Exception):
    """Base class for every error raised by the package."""


class InputError(HJBarrierError, ValueError):
    """Malformed input: wrong dimensions, bad polynomial text, empty samples."""


class DomainError(HJBarrierError, ValueError):
    """A point lies outside the set an operation is defined on."""


class ConfigurationError(HJBarrierError):
    """A problem or solver configuration violates a stated invariant."""


class NumericError(HJBarrierError, ArithmeticError):
    """A computation produced a non-finite value."""


class PolyParseError(InputError):
    """Polynomial text could not be parsed.

    ``column`` is 1-based and refers to the polynomial string itself; callers
    that know the enclosing document position can fill in ``line``.
    """

    def __init__(self, message, column=None, line=None):
        self.column = column
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")
        self.message = message
