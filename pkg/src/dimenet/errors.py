"""Exception types raised across the package."""


class DimeError(Exception):
    """Base class for all package errors."""


class NonPositiveDepth(DimeError, ValueError):
    def __init__(self, index=None, depth=None):
        self.index = index
        self.depth = depth
        msg = "point has non-positive depth"
        if index is not None:
            msg += f" (index {index}, Z={depth!r})"
        super().__init__(msg)


class DegenerateConfiguration(DimeError, ArithmeticError):
    pass


class NotConverged(DimeError, ArithmeticError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SingularHessian(DimeError, ArithmeticError):
    pass


class DimensionMismatch(DimeError, ValueError):
    pass


class InvalidDims(DimeError, ValueError):
    pass


class OutOfImageBounds(DimeError, ValueError):
    def __init__(self, index, pixel):
        self.index = index
        self.pixel = pixel
        super().__init__(f"pixel {tuple(pixel)} at index {index} lies outside the image")


class EmptyBaseline(DimeError, ValueError):
    pass


class DegenerateBaseline(DimeError, ValueError):
    pass


class OutOfRange(DimeError, ValueError):
    pass


class RetryExhausted(DimeError, RuntimeError):
    pass


class InvalidKeep(DimeError, ValueError):
    pass


class VersionMismatch(DimeError, ValueError):
    pass


class ParseError(DimeError, ValueError):
    def __init__(self, message, line=None, offset=None):
        self.line = line
        self.offset = offset
        if line is not None:
            message = f"{message} (line {line}, offset {offset})"
        super().__init__(message)
