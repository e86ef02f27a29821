"""Exception hierarchy.

Every error raised on bad input derives from :class:`GFigsError`; the CLI maps
the three families below onto its exit codes.
"""


class GFigsError(Exception):
    """Base class for all library errors."""


class ConfigError(GFigsError, ValueError):
    """Invalid configuration or hyperparameter grid."""


class DataError(GFigsError, ValueError):
    """Malformed data: schema mismatches, bad values, impossible splits."""


class SchemaError(DataError):
    pass


class DataValidationError(DataError):
    pass


class ImputationError(DataError):
    pass


class SplitError(DataError):
    pass


class RoutingError(DataError, KeyError):
    """Prediction requested for a group the model was not fit on."""

    def __str__(self):
        return Exception.__str__(self)


class DegenerateError(GFigsError, ValueError):
    """A statistic is undefined for the given data (single class, zero weight)."""


class DegenerateClassError(DegenerateError):
    pass


class DegenerateWeightError(DegenerateError):
    pass
