"""Exception hierarchy shared across the package.

Every error raised by lobeval derives from :class:`LobEvalError` so callers
can catch one type at the CLI boundary. Subclasses distinguish bad input
data from bad configuration from internal inconsistencies, which map onto
distinct process exit codes.
"""


class LobEvalError(Exception):
    """Base class for all lobeval errors."""


class ParseError(LobEvalError):
    """A CSV file could not be parsed. Carries the 1-based row if known."""

    def __init__(self, message: str, row: int | None = None, path: str | None = None):
        self.row = row
        self.path = path
        prefix = ""
        if path is not None:
            prefix += f"{path}: "
        if row is not None:
            prefix += f"row {row}: "
        super().__init__(prefix + message)


class ValidationError(LobEvalError):
    """Parsed data violates a structural invariant (crossed book, bad type...)."""

    def __init__(self, message: str, row: int | None = None, path: str | None = None):
        self.row = row
        self.path = path
        prefix = ""
        if path is not None:
            prefix += f"{path}: "
        if row is not None:
            prefix += f"row {row}: "
        super().__init__(prefix + message)


class DataError(LobEvalError):
    """Dataset-level problem: missing files, orphan halves, empty roles."""


class ConfigError(LobEvalError):
    """Invalid run configuration or CLI arguments."""


class InconsistencyError(LobEvalError):
    """A message references book state that does not exist (replay only)."""


class TrainingError(LobEvalError):
    """Discriminator training diverged (non-finite loss)."""
