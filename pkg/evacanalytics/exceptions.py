"""
Exception hierarchy shared by every app.

Each class carries the process exit code the management commands use when
the error escapes a stage: 2 for configuration, 3 for data, 4 for fitting.
"""


class EvacAnalyticsError(Exception):
    exit_code = 1


class ConfigError(EvacAnalyticsError):
    exit_code = 2

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f'{field}: {message}' if field else message)


class DataError(EvacAnalyticsError):
    exit_code = 3


class InputError(DataError):
    """Value outside its domain (non-finite coordinate, z <= 0, ...)."""


class FormatError(DataError):
    """File does not follow its schema."""


class DataQualityError(DataError):
    """Too much of an input was unusable to trust the rest."""


class AssignmentError(DataError):
    pass


class EstimationError(DataError):
    pass


class InsufficientObservationError(EstimationError):
    pass


class NoObservationError(DataError):
    pass


class UndeterminedError(DataError):
    pass


class NoDataAtIntensityError(DataError):
    pass


class EmptyDistributionError(DataError):
    pass


class InsufficientSamplesError(DataError):
    pass


class NothingToCompareError(DataError):
    pass


class FitError(EvacAnalyticsError):
    exit_code = 4


class DegenerateDataError(FitError):
    pass


class UnidentifiableError(FitError):
    pass


class UndefinedCorrelationError(FitError):
    pass


class UndefinedMapeError(FitError):
    pass


class StageError(EvacAnalyticsError):
    """A pipeline stage failed; wraps the underlying error and keeps its exit code."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, 'exit_code', 1)
        super().__init__(f"stage '{stage}' failed: {cause}")
