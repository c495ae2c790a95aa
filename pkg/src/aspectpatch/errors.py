"""Exception types raised across the package."""


class AspectPatchError(Exception):
    """Base class for all package errors."""


class InvalidHistogram(AspectPatchError, ValueError):
    pass


class DimensionMismatch(AspectPatchError, ValueError):
    pass


class EmptyPatchSet(AspectPatchError, ValueError):
    pass


class PatchTooLarge(AspectPatchError, ValueError):
    pass


class InputTooSmall(AspectPatchError, ValueError):
    pass


class StateError(AspectPatchError, RuntimeError):
    pass


class EmptyDataset(AspectPatchError, ValueError):
    pass


class DegenerateSeries(AspectPatchError, ValueError):
    pass


class ParseError(AspectPatchError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(ParseError):
    pass


class DecodeError(AspectPatchError, OSError):
    def __init__(self, path, reason=""):
        self.path = str(path)
        super().__init__(f"cannot decode image {self.path!s}" + (f": {reason}" if reason else ""))
