"""Exception hierarchy shared by every layer of the package."""


class MSDSError(Exception):
    """Base class for all errors raised by msds."""


class InvalidParameterError(MSDSError, ValueError):
    pass


class OutOfBoundsError(MSDSError, ValueError):
    def __init__(self, point, grid):
        self.point = point
        super().__init__(f"point (lat={point[0]!r}, lon={point[1]!r}) lies outside grid extent {grid.describe()}")


class EmptyDatasetError(MSDSError, ValueError):
    pass


class IncompatibleGridError(MSDSError, ValueError):
    pass


class DuplicateDatasetError(MSDSError, KeyError):
    pass


class DatasetNotFoundError(MSDSError, KeyError):
    pass


class FormatError(MSDSError, ValueError):
    """Malformed, truncated or version-mismatched binary input."""


class StaleGraphError(MSDSError):
    """A dataset graph no longer matches the index it is used with."""


class DuplicateSourceError(MSDSError, KeyError):
    pass


class PartialResultError(MSDSError):
    """One or more sources failed while answering a fan-out query."""

    def __init__(self, failed: dict[str, str], partial=None):
        self.failed = dict(failed)
        self.partial = partial
        names = ", ".join(sorted(self.failed))
        super().__init__(f"sources failed: {names}")


class GuardExceededError(MSDSError):
    """An oracle was asked to enumerate an instance beyond its hard limit."""


class ProtocolError(MSDSError):
    pass
