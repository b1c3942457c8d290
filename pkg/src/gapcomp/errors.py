"""Exception hierarchy shared by every gapcomp module."""


class GapCompError(Exception):
    """Base class for all gapcomp errors."""


class ParameterError(GapCompError, ValueError):
    """An argument is outside its valid domain."""


class ConfigError(GapCompError, ValueError):
    """A run configuration is malformed or contains unknown keys."""


class FormatError(GapCompError):
    """A file does not follow the expected binary/JSON layout."""


class IntegrityError(GapCompError):
    """Records violate a structural invariant (pairing, duplicates)."""


class DataError(GapCompError):
    """Numeric payload is unusable (non-finite values)."""


class DegenerateVectorError(GapCompError, ArithmeticError):
    """A vector that must be normalized has zero norm."""


class DegenerateCentroidError(DegenerateVectorError):
    """A centroid that must be normalized has zero norm."""


class TrainingError(GapCompError, ArithmeticError):
    """Optimization produced a non-finite loss."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
