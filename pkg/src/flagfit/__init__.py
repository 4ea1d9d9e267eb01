"""flagfit: recover fabric parameters from silhouette video of a waving flag.

The package simulates a pinned rectangular cloth under gravity, wind drag
and direction-dependent bending stiffness, renders it to grayscale video,
summarizes the video with a spectral motion descriptor, and searches the
physical parameter space with Gaussian-process Bayesian optimization so
that simulated clips match a target clip.
"""

from .backend import BACKEND
from .errors import (
    BoundsError,
    ConfigError,
    FlagfitError,
    IngestionError,
    InstabilityError,
    NumericalError,
)
from .params import ParameterVector, SearchSpace, default_search_space

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BoundsError",
    "ConfigError",
    "FlagfitError",
    "IngestionError",
    "InstabilityError",
    "NumericalError",
    "ParameterVector",
    "SearchSpace",
    "default_search_space",
    "__version__",
]
