"""Exception taxonomy shared by all modules.

Each class carries a short category label used by the CLI to print
categorized error messages and pick exit codes.
"""


class TsrError(Exception):
    category = "error"


class ShapeError(TsrError):
    """Operand dimensions disagree."""
    category = "shape"


class ConfigError(TsrError):
    """Invalid or inconsistent configuration value."""
    category = "config"


class DataError(TsrError):
    """Input data violates a contract (ordering, emptiness, coverage)."""
    category = "data"


class ParseError(DataError):
    """Malformed input file; carries the 1-based line number."""
    category = "parse"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(TsrError):
    """Checkpoint container does not match the expected binary layout."""
    category = "format"


class NumericError(TsrError):
    """Non-finite value where a finite one is required."""
    category = "numeric"


class DegenerateError(TsrError):
    """Statistic undefined for this input (e.g. zero variance)."""
    category = "degenerate"


class EmptySetError(DataError):
    """An operation produced or received an empty collection."""
    category = "empty-set"
