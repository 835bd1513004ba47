"""
Exceptions.

Every error raised on purpose by the package derives from `DbeaError`, and
carries the process exit code the command line tool reports for it.
"""


class DbeaError(Exception):
    """
    Base class for all package errors.
    """
    exit_code = 1


class ConfigError(DbeaError):
    """
    A configuration value is unknown, mistyped, or violates a constraint.

    Parameters
    ----------

    message : string
        Description of the problem
    key : string, optional
        Dotted name of the offending key, e.g. ``loss.lambda_tq``
    """
    exit_code = 2

    def __init__(self, message, key=None):
        if key is not None:
            message = "{}: {}".format(key, message)
        super().__init__(message)
        self.key = key


class DataError(DbeaError):
    """
    A data file is corrupt or incompatible with the run.
    """
    exit_code = 3


class CheckpointError(DataError):
    """
    A checkpoint is truncated, has a bad digest, or an unknown version.
    """


class ShapeError(DbeaError, ValueError):
    """
    Array dimensions do not agree.
    """
    exit_code = 3


class TrainingDivergence(DbeaError):
    """
    A loss or gradient became non-finite.
    """
    exit_code = 4


class UndefinedMetricError(DbeaError):
    """
    A metric is undefined for the given samples (e.g. only one label present).
    """
    exit_code = 3


class OracleFailure(DbeaError):
    """
    A verification oracle could not be evaluated.
    """


class EmptySelectionError(DbeaError, ValueError):
    """
    A score was requested over an empty set of detections.
    """


class InvalidConfidenceError(DbeaError, ValueError):
    """
    A detection confidence outside (0, 1].
    """
