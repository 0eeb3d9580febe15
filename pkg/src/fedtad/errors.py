"""Exception types raised across the package."""

from __future__ import annotations


class FedTadError(Exception):
    """Base class for all package errors."""


class GraphError(FedTadError, ValueError):
    pass


class DatasetError(FedTadError):
    """A dataset directory is missing a file or holds malformed content."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class MissingFileError(DatasetError):
    pass


class CountMismatchError(DatasetError):
    pass


class MalformedRowError(DatasetError):
    pass


class PartitionError(FedTadError, ValueError):
    pass


class ShapeError(FedTadError, ValueError):
    """Operands of a tensor op have incompatible shapes."""

    def __init__(self, op: str, *shapes):
        shown = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")
        self.op = op
        self.shapes = shapes


class NonFiniteError(FedTadError, FloatingPointError):
    pass


class ConfigError(FedTadError, ValueError):
    pass
