"""Daily market engine: listings, offers, closings, estimate updates.

Each simulated day runs a fixed pipeline: (1) lock prices for sales whose
offer matured today, (2) apply today's closings in the order their sales
were created, (3) list new houses. Locking before closing means a price
never sees a same-day closing, which is what makes the engine replayable
by the reference solver. A run is one logical thread of state mutation;
concurrency only ever happens across independent runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .citygen import ConfigError
from .metrics import InflationSeries, SeriesBuilder
from .repp import (
    City,
    ClosingPolicy,
    KernelSpec,
    MarketState,
    Money,
    TransactionRecord,
    UpdateCoefficients,
    apply_closing,
    policy_for,
    price_opted_in,
    price_opted_out,
)


@dataclass(frozen=True)
class SimConfig:
    horizon_days: int
    kernel: KernelSpec = field(default_factory=KernelSpec)
    coefficients: UpdateCoefficients = field(default_factory=UpdateCoefficients)
    daily_listing_fraction: float = 0.0005
    offer_delay_days: int = 5
    closing_delay_days: int = 30
    optout_updates_lambda: bool = True
    seed: int = 0

    def validate(self) -> None:
        if not 0 < self.daily_listing_fraction < 1:
            raise ConfigError(
                f"daily_listing_fraction must be in (0, 1), got "
                f"{self.daily_listing_fraction}")
        if self.offer_delay_days < 0 or self.closing_delay_days < 0:
            raise ConfigError("delays must be >= 0")
        if self.horizon_days < 0:
            raise ConfigError(f"horizon_days must be >= 0, got {self.horizon_days}")


@dataclass
class PendingSale:
    """A listed house moving through the offer and escrow delays."""

    house: int
    listing_day: int
    contract_day: int
    closing_day: int
    locked_price: Money | None = None


@dataclass
class RunDiagnostics:
    listings_total: int = 0
    closings_total: int = 0
    pool_exhausted_days: int = 0
    lambda_clamp_events: int = 0


def select_new_listings(eligible: np.ndarray, carry: float, per_day_quota: float,
                        generator: np.random.Generator) -> tuple[np.ndarray, float, bool]:
    """Pick today's new listings uniformly without replacement.

    The integer count comes from a running fractional accumulator
    (``carry`` plus today's quota, floored) so the long-run listing rate
    is exact. Returns (chosen ids, new carry, pool-exhausted flag); when
    the eligible pool is smaller than the count, the whole pool is listed.
    """
    acc = carry + per_day_quota
    count = int(acc)
    carry = acc - count
    exhausted = False
    if count >= eligible.shape[0]:
        chosen = eligible.copy()
        exhausted = count > eligible.shape[0]
    elif count == 0:
        chosen = eligible[:0]
    else:
        chosen = generator.choice(eligible, size=count, replace=False)
    return chosen, carry, exhausted


def lock_price(sale: PendingSale, state: MarketState, houses: City,
               coeffs: UpdateCoefficients) -> Money:
    """Lock the sale price from the current estimates.

    Must run on the contract day before any of that day's closings are
    applied. Opted-in houses sell at the larger of the public estimate
    and the owner valuation; opted-out houses at the owner valuation.
    """
    i = sale.house
    if houses.opt_in[i]:
        p = price_opted_in(float(state.lam[i]), float(houses.v[i]),
                           float(houses.u[i]), float(state.rho[i]))
    else:
        p = price_opted_out(float(state.lam[i]), float(houses.u[i]),
                            float(state.rho[i]))
    sale.locked_price = p
    return p


@dataclass
class World:
    """Everything one run mutates day to day."""

    city: City
    state: MarketState
    config: SimConfig
    day: int = 0
    carry: float = 0.0
    pending: np.ndarray = None
    contracts_due: dict[int, list[PendingSale]] = field(default_factory=dict)
    closings_due: dict[int, list[PendingSale]] = field(default_factory=dict)
    log: list[TransactionRecord] = field(default_factory=list)
    diagnostics: RunDiagnostics = field(default_factory=RunDiagnostics)
    day_closings: list[Money] = field(default_factory=list)

    def __post_init__(self):
        if self.pending is None:
            self.pending = np.zeros(self.city.n, dtype=bool)
        self._listing_rng = rng.substream(self.config.seed, rng.STREAM_LISTINGS)
        self._quota = self.city.n * self.config.daily_listing_fraction


def step_day(day: int, world: World) -> World:
    """Advance one day: lock due prices, apply due closings, list anew."""
    cfg = world.config
    world.day = day
    world.day_closings.clear()

    # (1) price locks for offers maturing today, before today's closings
    for sale in world.contracts_due.pop(day, ()):
        lock_price(sale, world.state, world.city, cfg.coefficients)

    # (2) closings, in sale-creation order
    for sale in world.closings_due.pop(day, ()):
        record = TransactionRecord(sale.contract_day, sale.closing_day,
                                   sale.house, sale.locked_price)
        policy = policy_for(bool(world.city.opt_in[sale.house]),
                            cfg.optout_updates_lambda)
        apply_closing(world.state, record, world.city, cfg.kernel,
                      cfg.coefficients, policy)
        world.pending[sale.house] = False
        world.log.append(record)
        world.day_closings.append(record.price)
        world.diagnostics.closings_total += 1

    # (3) new listings from the not-pending pool
    eligible = np.flatnonzero(~world.pending)
    chosen, world.carry, exhausted = select_new_listings(
        eligible, world.carry, world._quota, world._listing_rng)
    if exhausted:
        world.diagnostics.pool_exhausted_days += 1
    for i in chosen:
        sale = PendingSale(
            house=int(i),
            listing_day=day,
            contract_day=day + cfg.offer_delay_days,
            closing_day=day + cfg.offer_delay_days + cfg.closing_delay_days,
        )
        world.contracts_due.setdefault(sale.contract_day, []).append(sale)
        world.closings_due.setdefault(sale.closing_day, []).append(sale)
        world.pending[i] = True
        world.diagnostics.listings_total += 1

    return world


def run_with_state(city: City, initial_state: MarketState, sim_config: SimConfig,
                   recorder=None):
    """Like :func:`run`, additionally returning the final market state."""
    sim_config.validate()
    world = World(city=city, state=initial_state.copy(), config=sim_config)
    series = SeriesBuilder(city, world.state)
    if recorder is not None:
        recorder(series.rows[-1])

    for day in range(1, sim_config.horizon_days + 1):
        step_day(day, world)
        series.record_day(day, world.state, world.day_closings)
        if recorder is not None:
            recorder(series.rows[-1])

    world.diagnostics.lambda_clamp_events = world.state.lambda_clamp_events
    return series.build(), world.log, world.diagnostics, world.state


def run(city: City, initial_state: MarketState, sim_config: SimConfig,
        recorder=None) -> tuple[InflationSeries, list[TransactionRecord], RunDiagnostics]:
    """Run the daily market for the configured horizon.

    Returns the per-day inflation series (day 0 is the untouched initial
    state), the fully priced transaction log ordered by closing day, and
    run diagnostics. ``initial_state`` is not mutated. ``recorder``, if
    given, is called with each day's metrics row as it is produced.
    """
    series, log, diagnostics, _ = run_with_state(city, initial_state, sim_config,
                                                 recorder)
    return series, log, diagnostics
