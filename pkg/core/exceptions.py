"""
Exception hierarchy shared by every benchmark app.

Management commands map these onto process exit codes through
``as_command_error``; runner cells catch them and record a failure instead of
aborting sibling cells.
"""
from typing import Optional

from django.core.management.base import CommandError


EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_PARTIAL_FAILURE = 3


class BenchmarkError(Exception):
    """Base class for all harness errors."""
    exit_code = EXIT_FAILURE


class ConfigurationError(BenchmarkError):
    exit_code = EXIT_CONFIG_ERROR

    def __init__(self, message: str, errors: Optional[dict] = None):
        self.errors = errors or {}
        if self.errors:
            message = f"{message}: {self.errors}"
        super().__init__(message)


# ==================== Ingest ====================

class DatasetIOError(BenchmarkError):
    pass


class ManifestError(BenchmarkError):
    pass


class WaveformParseError(BenchmarkError):
    def __init__(self, path, row: int, detail: str):
        self.path = str(path)
        self.row = row
        super().__init__(f"{self.path}: row {row}: {detail}")


class WaveformLengthError(BenchmarkError):
    def __init__(self, path, expected: Optional[int], actual: int, detail: str = ''):
        self.path = str(path)
        self.expected = expected
        self.actual = actual
        msg = f"{self.path}: length mismatch (expected {expected}, got {actual})"
        if detail:
            msg = f"{msg}: {detail}"
        super().__init__(msg)


class UnsupportedRateError(BenchmarkError):
    pass


# ==================== Features ====================

class FeatureError(BenchmarkError):
    pass


class WindowTooLongError(FeatureError):
    def __init__(self, record_id: str, n_samples: int, window_length: int):
        self.record_id = record_id
        super().__init__(
            f"record {record_id} has {n_samples} samples, "
            f"shorter than window length {window_length}"
        )


class NonFiniteFeatureError(FeatureError):
    pass


# ==================== Labeling / splits ====================

class LabelingError(BenchmarkError):
    pass


class SplitError(BenchmarkError):
    pass


# ==================== Classifiers / metrics ====================

class ModelError(BenchmarkError):
    pass


class DimensionMismatchError(ModelError):
    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"expected {expected} feature columns, got {actual}")


class MetricError(BenchmarkError):
    pass


class UnknownLabelError(MetricError):
    def __init__(self, label):
        self.label = label
        super().__init__(f"unknown label {label!r}")


# ==================== Runner ====================

class ContaminationError(BenchmarkError):
    pass


class PartialFailureError(BenchmarkError):
    """Some report cells failed; the report itself was written."""
    exit_code = EXIT_PARTIAL_FAILURE


def as_command_error(exc: BenchmarkError) -> CommandError:
    """Wrap a harness error so ``manage.py`` exits with the matching code."""
    return CommandError(str(exc), returncode=exc.exit_code)
