"""Exception types shared across the package."""


class FmcorrError(Exception):
    """Base class for all library errors."""


class MeshFormatError(FmcorrError, ValueError):
    """A mesh file could not be parsed or describes an invalid mesh."""

    def __init__(self, message, line=None, face=None):
        self.line = line
        self.face = None if face is None else int(face)
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(FmcorrError, ValueError):
    """A binary or text artifact does not follow its declared layout."""


class NumericalError(FmcorrError, ArithmeticError):
    """A numerical routine failed (non-convergence, singular input, ...)."""


class EigenSolverError(NumericalError):
    def __init__(self, message, residuals=None):
        self.residuals = residuals
        super().__init__(message)


class DegenerateColumnError(NumericalError):
    """A soft-correspondence column is identically zero and cannot be normalized."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"degenerate column(s) {self.columns[:10]}: cannot normalize")


class ChecksumError(FmcorrError):
    def __init__(self, path, expected, actual):
        self.path = path
        super().__init__(f"checksum mismatch for {path}: expected {expected}, got {actual}")
