"""
Error hierarchy for the grader.

Each family maps onto one CLI exit status (see app.main):
- ConfigError  -> 1 (usage or configuration problem)
- DataError    -> 2 (dataset, embedding, vocabulary or checkpoint files; main() maps OSError here too)
- NumericError -> 3 (non-finite values, failed gradient checks, masking violations)
"""


class GraderError(Exception):
    """Base class for all errors raised by the grader."""

    exit_code: int = 1


class ConfigError(GraderError, ValueError):
    """Invalid or unknown configuration key, flag or value."""

    exit_code = 1


class DataError(GraderError):
    """Unreadable or malformed input file."""

    exit_code = 2


class DatasetFormatError(DataError, ValueError):
    """Malformed line in a tab-separated dataset file."""

    def __init__(self, path: str, line_number: int, reason: str):
        self.path = path
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"{path}:{line_number}: {reason}")


class EmbeddingFormatError(DataError, ValueError):
    """Malformed line in a word-vector text file."""

    def __init__(self, path: str, line_number: int, reason: str):
        self.path = path
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"{path}:{line_number}: {reason}")


class CheckpointError(DataError, ValueError):
    """Checkpoint file failed version, checksum or shape validation."""


class NumericError(GraderError, ArithmeticError):
    """Non-finite loss or gradient, or a failed numerical verification."""

    exit_code = 3


class ShapeError(GraderError, ValueError):
    """Tensor extents violate an operation's shape contract."""

    exit_code = 3


class MaskingError(GraderError, ValueError):
    """A softmax row has no unmasked entry."""

    exit_code = 3
