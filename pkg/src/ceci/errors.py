"""Exception hierarchy shared by every module.

The CLI maps any ``CeciError`` to exit code 1.
"""


class CeciError(Exception):
    """Base class for domain errors."""


class OntologyError(CeciError):
    pass


class GraphFormatError(CeciError):
    pass


class ConfigError(CeciError):
    pass


class ShapeError(CeciError, ValueError):
    pass


class NonFiniteError(CeciError, FloatingPointError):
    pass


class TrainingError(CeciError):
    pass


class CheckpointError(CeciError):
    pass


class MetricError(CeciError, ValueError):
    pass
