"""Procedural square-grid city generation.

A city is built in three seeded, independent random substreams: location
key points on a coarse lattice (bilinearly interpolated to every house),
construction values scaled by how expensive the location is, and opt-in
flags. ``generate_city`` is a pure function of its config, including the
seed, so one config always yields one city bit for bit.

Generation is single-pass; parallelizing it would require per-house
counter-addressed draws, so it stays single-threaded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .repp import City, MarketState, Money


class ConfigError(ValueError):
    """A config field violates its bound; the message names the field."""


@dataclass(frozen=True)
class CityConfig:
    side: int
    neighborhood_size: int
    error_range: Money
    opt_out_fraction: float = 0.0
    lambda_min: Money = 30_000.0
    lambda_max: Money = 230_000.0
    x_min: Money = 100_000.0
    x_max: Money = 600_000.0
    seed: int = 0

    def validate(self) -> None:
        if self.side < 2:
            raise ConfigError(f"side must be >= 2, got {self.side}")
        if self.neighborhood_size < 1:
            raise ConfigError(
                f"neighborhood_size must be >= 1, got {self.neighborhood_size}")
        if not 0 < self.lambda_min < self.lambda_max:
            raise ConfigError(
                f"lambda bounds must satisfy 0 < lambda_min < lambda_max, "
                f"got [{self.lambda_min}, {self.lambda_max}]")
        if not 0 < self.x_min < self.x_max:
            raise ConfigError(
                f"construction bounds must satisfy 0 < x_min < x_max, "
                f"got [{self.x_min}, {self.x_max}]")
        if not 0 <= self.error_range < 2 * self.x_min:
            raise ConfigError(
                f"error_range must be in [0, {2 * self.x_min}) to keep owner "
                f"values positive, got {self.error_range}")
        if not 0 <= self.opt_out_fraction <= 1:
            raise ConfigError(
                f"opt_out_fraction must be in [0, 1], got {self.opt_out_fraction}")


@dataclass
class KeyGrid:
    """Location values on a coarse lattice with cell side ``spacing``.

    The lattice covers the whole city: key j sits at coordinate
    j * spacing, and the last key is at or past the last house.
    """

    spacing: int
    values: np.ndarray

    @property
    def points_per_axis(self) -> int:
        return self.values.shape[0]


def key_points_per_axis(side: int, spacing: int) -> int:
    """ceil((side-1)/spacing) + 1 keys cover [0, side-1] per axis."""
    return math.ceil((side - 1) / spacing) + 1


def generate_key_grid(config: CityConfig, generator: np.random.Generator) -> KeyGrid:
    """Draw i.i.d. uniform location values on the key lattice (row-major)."""
    k = key_points_per_axis(config.side, config.neighborhood_size)
    values = generator.uniform(config.lambda_min, config.lambda_max, size=(k, k))
    return KeyGrid(config.neighborhood_size, values)


def interpolate_location(grid: KeyGrid, pos: np.ndarray | tuple[float, float]) -> np.ndarray | float:
    """Bilinear blend of the four key values enclosing ``pos`` = (x, y).

    Exact at key points; the result always lies within the corner values.
    Positions past the last key row/column are evaluated in the last cell.
    Accepts a single (x, y) pair or an (n, 2) array.
    """
    p = np.asarray(pos, dtype=np.float64)
    scalar = p.ndim == 1
    if scalar:
        p = p[np.newaxis, :]
    s = float(grid.spacing)
    k = grid.points_per_axis
    jx = np.clip((p[:, 0] // s).astype(np.int64), 0, k - 2)
    jy = np.clip((p[:, 1] // s).astype(np.int64), 0, k - 2)
    fx = p[:, 0] / s - jx
    fy = p[:, 1] / s - jy
    v = grid.values
    out = ((1 - fy) * (1 - fx) * v[jy, jx]
           + (1 - fy) * fx * v[jy, jx + 1]
           + fy * (1 - fx) * v[jy + 1, jx]
           + fy * fx * v[jy + 1, jx + 1])
    return float(out[0]) if scalar else out


def construction_scale(lam: np.ndarray | float, config: CityConfig) -> np.ndarray | float:
    """How much more expensive a location is than the cheapest one."""
    return 1.0 + (lam - config.lambda_min) / (config.lambda_min * 10.0)


def assign_construction_values(lam, config: CityConfig,
                               generator: np.random.Generator):
    """Draw (v, u) for houses with location values ``lam``.

    v is a uniform base value x on [x_min, x_max] scaled up with the
    location; u offsets v by half an error drawn uniformly on
    [0, error_range], with a fair independent sign. Guarantees
    |v - u| <= error_range / 2. Draw order (all x, then all errors, then
    all signs) is part of the reproducibility contract.
    """
    lam = np.asarray(lam, dtype=np.float64)
    n = lam.shape
    x = generator.uniform(config.x_min, config.x_max, size=n)
    eps = generator.uniform(0.0, config.error_range, size=n)
    sign = generator.integers(0, 2, size=n) * 2 - 1
    v = x * construction_scale(lam, config)
    u = v + sign * eps / 2.0
    return v, u


def generate_city(config: CityConfig) -> tuple[City, MarketState]:
    """Build the full city and its initial market state from the seed.

    Houses sit at integer positions (x=col, y=row), row-major. Initial
    rho is zero everywhere. Opt-out flags are independent Bernoulli draws.
    """
    config.validate()
    side = config.side
    n = side * side

    key = generate_key_grid(config, rng.substream(config.seed, rng.STREAM_KEY_GRID))

    cols = np.arange(side, dtype=np.float64)
    rows = np.arange(side, dtype=np.float64)
    xs = np.tile(cols, side)
    ys = np.repeat(rows, side)
    positions = np.column_stack([xs, ys])
    lam0 = interpolate_location(key, positions)

    v, u = assign_construction_values(
        lam0, config, rng.substream(config.seed, rng.STREAM_CONSTRUCTION))

    opt_draw = rng.substream(config.seed, rng.STREAM_OPT_IN).random(n)
    opt_in = opt_draw >= config.opt_out_fraction

    city = City(v=v, u=u, opt_in=opt_in, positions=positions, side=side)
    state = MarketState(lam=lam0, rho=np.zeros(n))
    return city, state


def audit_city(city: City, state: MarketState, config: CityConfig) -> dict[str, float]:
    """Post-generation checks; raises AssertionError on a violated bound."""
    lam, v, u = state.lam, city.v, city.u
    assert lam.min() >= config.lambda_min, "lambda below lambda_min"
    assert lam.max() <= config.lambda_max, "lambda above lambda_max"
    assert np.all(v > 0) and np.all(u > 0), "non-positive construction value"
    max_err = np.abs(v - u).max() if city.n else 0.0
    assert max_err <= config.error_range / 2 + 1e-9, "error beyond range/2"
    optout = 1.0 - city.opt_in.mean()
    return {
        "lambda_min": float(lam.min()),
        "lambda_max": float(lam.max()),
        "max_abs_error": float(max_err),
        "opt_out_fraction": float(optout),
    }
