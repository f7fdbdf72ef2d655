"""Exception types raised by the package."""


class ParameterError(ValueError):
    """An argument is outside the domain the operation accepts."""


class DatasetIOError(OSError):
    """A dataset or model file could not be read or written."""


class MalformedFileError(DatasetIOError):
    """A file was readable but its content is invalid.

    ``row`` and ``column`` are 1-based positions in the file (the header is
    row 1) when the problem can be localized, otherwise ``None``.
    """

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class ExperimentError(RuntimeError):
    """A benchmark run failed; ``n`` and ``rep`` locate the failing run."""

    def __init__(self, message, n=None, rep=None):
        super().__init__(f"n={n} rep={rep}: {message}")
        self.n = n
        self.rep = rep
