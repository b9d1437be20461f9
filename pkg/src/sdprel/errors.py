"""Exception types shared across the package."""


class SdprelError(Exception):
    """Base class for every error this package raises on purpose."""


class FormatError(SdprelError):
    """A file (or stream) does not match its declared format.

    Carries the source name and 1-based line number when they are known, so
    the CLI can point at the offending location.
    """

    def __init__(self, message, source=None, line=None):
        self.source = source
        self.line = line
        where = ""
        if source is not None and line is not None:
            where = f"{source}:{line}: "
        elif source is not None:
            where = f"{source}: "
        super().__init__(where + message)


class DataError(SdprelError):
    """Inputs are well-formed but mutually inconsistent or invalid."""


class AlignmentError(DataError):
    """Two input files that must describe the same sentences disagree."""


class GraphError(SdprelError):
    """A dependency graph violates the single-rooted-tree contract.

    ``kind`` is one of "cycle", "root", "range", "label"; ``node`` points at
    an offending node when one can be named.
    """

    def __init__(self, message, kind, node=None):
        self.kind = kind
        self.node = node
        super().__init__(message)


class NumericalError(SdprelError):
    """Training produced a non-finite quantity; the step was aborted."""


class UsageError(SdprelError):
    """Bad command line; the CLI maps this to exit code 1."""
