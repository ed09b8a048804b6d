"""Exception types raised across the package."""


class FairPolError(Exception):
    """Base class for all package errors."""


class ShapeError(FairPolError, ValueError):
    pass


class UsageError(FairPolError, RuntimeError):
    pass


class NumericError(FairPolError, FloatingPointError):
    """Non-finite value encountered; ``index`` locates the offending parameter."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConfigError(FairPolError, ValueError):
    pass


class CsvParseError(FairPolError, ValueError):
    """Malformed CSV input. ``row`` is 1-based over data rows (header excluded)."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column


class MissingColumnError(CsvParseError):
    pass


class NonNumericCellError(CsvParseError):
    pass


class NonBinaryActionError(CsvParseError):
    pass


class EmptyFileError(CsvParseError):
    pass


class FittingError(FairPolError, RuntimeError):
    pass


class EstimationError(FairPolError, ValueError):
    def __init__(self, message, group=None):
        super().__init__(message)
        self.group = group


class TrainingError(FairPolError, RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


class BoundInapplicableError(FairPolError, ValueError):
    def __init__(self, message, ell=None, nu=None):
        super().__init__(message)
        self.ell = ell
        self.nu = nu
