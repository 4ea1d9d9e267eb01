"""Physical parameter vector and its search space.

The 17 searched parameters of the flag model are, in fixed order:

* 15 bending stiffness samples (N·m): 5 samples per fabric direction
  (warp, weft, bias), taken at evenly spaced reparametrized fold angles
  alpha in {0, 0.25, 0.5, 0.75, 1.0} with linear interpolation between
  samples and constant extrapolation outside,
* fabric area weight (kg/m^2),
* wind speed (m/s).

Bending coefficients span two decades around a base material value, so they
are searched on a logarithmic scale; area weight and wind speed are linear.
The optimizer works on the box [-1, +1]^17; `normalize`/`denormalize`
convert between physical values and that box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, ConfigError

N_BEND = 15
N_PARAMS = 17
DIRECTIONS = ("warp", "weft", "bias")
ALPHA_SAMPLES = np.linspace(0.0, 1.0, 5)

# Admissible ranges independent of the base material (Table-1 style bounds).
AREA_WEIGHT_RANGE = (0.10, 0.17)
WIND_SPEED_RANGE = (0.0, 10.0)
BEND_SPAN = (0.1, 10.0)  # multiples of the base-material coefficient

# Placeholder base material: one value per bending sample, N*m.  The real
# "Camel Ponte Roma" measurements are not shipped; override via file.
DEFAULT_BASE_BENDING = 1e-5


def bending_names():
    return [f"bend_{d}_{i}" for d in DIRECTIONS for i in range(5)]


PARAM_NAMES = bending_names() + ["area_weight", "wind_speed"]


@dataclass
class ParameterVector:
    """The 17 physical parameters: bending samples, area weight, wind speed."""

    bending: np.ndarray  # shape (15,), N*m
    area_weight: float  # kg/m^2
    wind_speed: float  # m/s

    def __post_init__(self):
        self.bending = np.asarray(self.bending, dtype=float)
        if self.bending.shape != (N_BEND,):
            raise ConfigError(f"expected {N_BEND} bending values, got shape {self.bending.shape}")
        self.area_weight = float(self.area_weight)
        self.wind_speed = float(self.wind_speed)

    def as_array(self):
        """Flatten to the canonical 17-vector (bending..., area_weight, wind_speed)."""
        return np.concatenate([self.bending, [self.area_weight, self.wind_speed]])

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (N_PARAMS,):
            raise ConfigError(f"expected {N_PARAMS} values, got shape {values.shape}")
        return cls(values[:N_BEND].copy(), values[N_BEND], values[N_BEND + 1])

    def bending_table(self):
        """Bending samples as a (3 directions, 5 alphas) table."""
        return self.bending.reshape(len(DIRECTIONS), 5)


@dataclass
class NormalizedParams:
    """A point in the optimizer's box domain [-1, +1]^17."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.abs(self.values) > 1.0 + 1e-12):
            worst = int(np.argmax(np.abs(self.values)))
            raise ValueError(
                f"normalized component {worst} = {self.values[worst]} outside [-1, +1]"
            )


@dataclass
class SearchSpace:
    """Per-parameter bounds and scale flags defining the search box."""

    names: list[str]
    lower: np.ndarray
    upper: np.ndarray
    scale: list[str] = field(default_factory=list)  # "linear" | "log" per parameter

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        n = len(self.names)
        if not (self.lower.shape == self.upper.shape == (n,)) or len(self.scale) != n:
            raise ConfigError("search space fields have inconsistent lengths")
        if np.any(self.lower >= self.upper):
            bad = self.names[int(np.argmax(self.lower >= self.upper))]
            raise ConfigError(f"lower bound >= upper bound for parameter {bad!r}")
        for i, (nm, sc) in enumerate(zip(self.names, self.scale)):
            if sc not in ("linear", "log"):
                raise ConfigError(f"unknown scale {sc!r} for parameter {nm!r}")
            if sc == "log" and self.lower[i] <= 0:
                raise ConfigError(f"log-scaled parameter {nm!r} needs a positive lower bound")

    @property
    def dim(self):
        return len(self.names)

    def check_contains(self, values):
        """Raise BoundsError naming the first out-of-bounds parameter."""
        values = np.asarray(values, dtype=float)
        # 1-ulp slack so exact round-trips of the endpoints never trip the check
        lo = self.lower - np.abs(self.lower) * 1e-12
        hi = self.upper + np.abs(self.upper) * 1e-12
        bad = (values < lo) | (values > hi)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise BoundsError(
                f"parameter {self.names[i]!r} = {values[i]} outside "
                f"[{self.lower[i]}, {self.upper[i]}]"
            )

    def save(self, path):
        with open(path, "w") as fh:
            fh.write("# name lower upper scale\n")
            for nm, lo, hi, sc in zip(self.names, self.lower, self.upper, self.scale):
                fh.write(f"{nm} {float(lo)!r} {float(hi)!r} {sc}\n")

    @classmethod
    def load(cls, path):
        names, lower, upper, scale = [], [], [], []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 4:
                    raise ConfigError(f"{path}:{lineno}: expected 'name lower upper scale'")
                names.append(parts[0])
                try:
                    lower.append(float(parts[1]))
                    upper.append(float(parts[2]))
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: bad bound: {exc}") from exc
                scale.append(parts[3])
        return cls(names, np.array(lower), np.array(upper), scale)


def default_base_bending():
    """Placeholder base-material bending samples (override via file for real fabric)."""
    return np.full(N_BEND, DEFAULT_BASE_BENDING)


def load_base_bending(path):
    """Read a base-material file: one 'name value' line per bending sample."""
    values = dict.fromkeys(bending_names())
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or parts[0] not in values:
                raise ConfigError(f"{path}:{lineno}: expected '<bending name> <value>'")
            values[parts[0]] = float(parts[1])
    missing = [k for k, v in values.items() if v is None]
    if missing:
        raise ConfigError(f"{path}: missing base values for {missing}")
    return np.array([values[nm] for nm in bending_names()])


def default_search_space(base_bending=None):
    """Search box: log range around the base material plus the two linear ranges."""
    if base_bending is None:
        base_bending = default_base_bending()
    base_bending = np.asarray(base_bending, dtype=float)
    if base_bending.shape != (N_BEND,) or np.any(base_bending <= 0):
        raise ConfigError("base bending must be 15 positive values")
    lower = np.concatenate([BEND_SPAN[0] * base_bending, [AREA_WEIGHT_RANGE[0], WIND_SPEED_RANGE[0]]])
    upper = np.concatenate([BEND_SPAN[1] * base_bending, [AREA_WEIGHT_RANGE[1], WIND_SPEED_RANGE[1]]])
    scale = ["log"] * N_BEND + ["linear", "linear"]
    return SearchSpace(list(PARAM_NAMES), lower, upper, scale)


def _to_unit(values, space):
    """Map physical values to t in [0, 1] per parameter, log-aware."""
    values = np.asarray(values, dtype=float)
    t = np.empty_like(values)
    for i, sc in enumerate(space.scale):
        lo, hi = space.lower[i], space.upper[i]
        if sc == "log":
            t[i] = (np.log(values[i]) - np.log(lo)) / (np.log(hi) - np.log(lo))
        else:
            t[i] = (values[i] - lo) / (hi - lo)
    return t


def normalize(p: ParameterVector, space: SearchSpace) -> NormalizedParams:
    """Map a physical parameter vector onto [-1, +1]^17.

    Log-scaled parameters are normalized in the log domain.  Out-of-bounds
    input raises BoundsError; values are never silently clamped.
    """
    values = p.as_array()
    space.check_contains(values)
    return NormalizedParams(2.0 * _to_unit(values, space) - 1.0)


def denormalize(n: NormalizedParams, space: SearchSpace) -> ParameterVector:
    """Inverse of `normalize`; the box endpoints map to the bounds exactly."""
    t = (np.asarray(n.values, dtype=float) + 1.0) / 2.0
    values = np.empty_like(t)
    for i, sc in enumerate(space.scale):
        lo, hi = space.lower[i], space.upper[i]
        if t[i] == 0.0:
            values[i] = lo
        elif t[i] == 1.0:
            values[i] = hi
        elif sc == "log":
            values[i] = np.exp(np.log(lo) + t[i] * (np.log(hi) - np.log(lo)))
        else:
            values[i] = lo + t[i] * (hi - lo)
    return ParameterVector.from_array(values)


def sample_uniform(space: SearchSpace, rng_seed: int) -> ParameterVector:
    """Draw one parameter vector uniformly over the box (log-uniform on log scales)."""
    rng = np.random.default_rng(rng_seed)
    t = rng.uniform(size=space.dim)
    return denormalize(NormalizedParams(2.0 * t - 1.0), space)


def save_params(p: ParameterVector, path, header=None):
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        for nm, v in zip(PARAM_NAMES, p.as_array()):
            fh.write(f"{nm} {float(v)!r}\n")


def load_params(path):
    values = dict.fromkeys(PARAM_NAMES)
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or parts[0] not in values:
                raise ConfigError(f"{path}:{lineno}: expected '<parameter name> <value>'")
            values[parts[0]] = float(parts[1])
    missing = [k for k, v in values.items() if v is None]
    if missing:
        raise ConfigError(f"{path}: missing parameters {missing}")
    return ParameterVector.from_array(np.array([values[nm] for nm in PARAM_NAMES]))
