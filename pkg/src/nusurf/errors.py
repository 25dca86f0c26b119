"""Exception types shared across the package."""


class NusurfError(Exception):
    """Base class for all package-specific errors."""


class ConditioningError(NusurfError):
    """The joint covariance plus noise is not positive definite."""


class DegenerateUtilityError(NusurfError):
    """The utility denominator Tr(Sigma_u) vanished (no variance left to reduce)."""


class ExhaustedCandidatesError(NusurfError):
    """Every acquisition candidate coincides with an existing training input."""


class EmptySelectionError(NusurfError):
    """No event survives the selection cuts (efficiency denominator is empty)."""


class ExtrapolationError(NusurfError):
    """A test coordinate lies outside the sampled on-axis range."""


class ConfigError(NusurfError):
    """An experiment configuration failed validation."""
