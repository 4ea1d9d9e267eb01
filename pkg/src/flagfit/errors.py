"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, IngestionError -> 3,
NumericalError -> 4.
"""


class FlagfitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(FlagfitError):
    """Invalid configuration value, file, or combination of settings."""


class BoundsError(ConfigError):
    """A physical parameter lies outside its search-space bounds."""


class IngestionError(FlagfitError):
    """Target video could not be read (missing/corrupt frames, bad metadata)."""


class NumericalError(FlagfitError):
    """A numerical operation failed (degenerate geometry, factorization, ...)."""


class InstabilityError(NumericalError):
    """Simulation state became non-finite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
