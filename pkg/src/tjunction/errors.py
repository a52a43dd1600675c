"""Exception hierarchy shared across the package.

Each class carries the CLI exit code for its category.
"""


class TjunctionError(Exception):
    """Base class for categorized errors."""

    exit_code = 5


class ConfigError(TjunctionError):
    """Config file or value cannot be parsed."""

    exit_code = 2


class MissingArtifactError(TjunctionError):
    """A referenced artifact (policy file, input CSV) does not exist."""

    exit_code = 3


class SupportCoverageError(TjunctionError):
    """A proposal distribution has zero density where the target has mass."""

    exit_code = 4


class InvariantError(TjunctionError):
    """An internal invariant was violated at runtime."""

    exit_code = 5
