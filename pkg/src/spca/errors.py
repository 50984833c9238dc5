"""Exception hierarchy shared by every module."""


class SpcaError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(SpcaError, ValueError):
    pass


class ParseError(SpcaError, ValueError):
    """Malformed CSV input. ``row`` is the 1-based line number, when known."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class DegenerateGeometryError(SpcaError):
    pass


class OutOfRangeError(SpcaError, ValueError):
    """A curve coordinate or metric length outside what the curve supports.

    ``attainable`` carries the (low, high) interval that would have been valid.
    """

    def __init__(self, message, attainable=None):
        super().__init__(message)
        self.attainable = attainable


class FitFailure(SpcaError):
    def __init__(self, message, cell_errors=None):
        super().__init__(message)
        self.cell_errors = cell_errors or {}


class TransformFailure(SpcaError):
    def __init__(self, message, dimension=None):
        super().__init__(message)
        self.dimension = dimension


class InversionFailure(SpcaError):
    def __init__(self, message, dimension=None, attainable=None):
        super().__init__(message)
        self.dimension = dimension
        self.attainable = attainable


class ClassificationFailure(SpcaError):
    pass


class AdaptationFailure(SpcaError):
    def __init__(self, message, stage):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
