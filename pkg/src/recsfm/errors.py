"""Exception hierarchy shared by every recsfm module.

Each class maps to one failure family so the CLI can translate them into
stable exit codes (usage/config -> 2, data -> 3, numerics -> 4).
"""


class RecsfmError(Exception):
    """Base class for all recsfm-raised errors."""


class ConfigError(RecsfmError):
    """A configuration value is missing, unknown, or out of range."""


class UsageError(RecsfmError):
    """Command-line arguments are inconsistent or incomplete."""


class DimensionError(RecsfmError):
    """Tensor or array shapes do not line up for the requested op."""


class GraphError(RecsfmError):
    """The autodiff graph is malformed (e.g. contains a cycle)."""


class NumericsError(RecsfmError):
    """A non-finite value appeared where finite math was required."""


class DomainError(RecsfmError):
    """An input value lies outside the mathematical domain of an op."""


class IoError(RecsfmError):
    """A file could not be read or written; message names the path."""


class FormatError(RecsfmError):
    """A file parsed but its contents violate the documented layout."""


class GenerationError(RecsfmError):
    """Scene generation failed to satisfy its constraints."""
