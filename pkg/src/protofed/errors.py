"""Exception types with stable machine-readable error codes.

The CLI prints ``<CODE>: <message>`` on a single line for every failure so
scripts can dispatch on the code without parsing prose.
"""


class ProtofedError(Exception):
    """Base class for all simulator errors."""

    code = "INTERNAL"


class ConfigNotFoundError(ProtofedError):
    code = "CONFIG_NOT_FOUND"


class ConfigRangeError(ProtofedError):
    """Config value out of range, wrong type, or unknown key."""

    code = "CONFIG_RANGE"


class DataFormatError(ProtofedError):
    """Malformed dataset file; carries file and line for diagnostics."""

    code = "DATA_FORMAT"

    def __init__(self, message, file=None, line=None):
        self.file = file
        self.line = line
        loc = ""
        if file is not None:
            loc = f"{file}:{line}: " if line is not None else f"{file}: "
        super().__init__(f"{loc}{message}")


class DivergedError(ProtofedError):
    """Non-finite training loss; aborts the run with round/client context."""

    code = "DIVERGED"


class DegeneratePrototypeError(ProtofedError):
    """Zero-norm prototype where a direction is required (collapsed class)."""

    code = "DEGENERATE_PROTOTYPE"
