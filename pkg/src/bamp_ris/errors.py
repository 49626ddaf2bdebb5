"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """Raised for out-of-range model or algorithm parameters."""


class InvalidDimensionError(ValueError):
    """Raised for empty or mismatched matrix dimensions."""


class NumericalError(RuntimeError):
    """A non-finite value appeared during message passing."""


class IllConditionedPilotError(ValueError):
    """The pilot block is not right-invertible."""


class RankDeficiencyError(ValueError):
    """A matrix that must have full column rank does not."""


class ConfigError(ValueError):
    """A configuration file or mapping failed validation."""


class FormatError(RuntimeError):
    """A stored scene or report could not be decoded."""
