"""Core market model: houses, market state, and the estimate update rules.

The model tracks two per-house dollar estimates that evolve as houses
trade: ``lambda`` (the estimator's location value) and ``rho`` (the
owner's perceived market adjustment). Each closing of a sale perturbs
both fields in a neighborhood around the sold house, with a linearly
decaying kernel weight. ``solve_repp`` replays an ordered transaction
vector against an initial state and is the reference solver the daily
engine is checked against.

Money values are double-precision dollars. All per-closing updates are
computed from a snapshot of the pre-closing state and written in a fixed
order (ascending house id), so a run is bit-deterministic for one build.
State mutation is single-threaded by contract; nothing here locks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Sequence

import numpy as np

Money = float  # dollars; finite, never NaN/inf


class ModelError(ValueError):
    """Invalid model input (bad transaction vector, unknown house, ...)."""


class PiVariant(Enum):
    """Which owner-adjustment (rho) increment rule to apply.

    PAPER_LITERAL divides the closing surprise relative to the full
    public estimate by (a*lambda + b) and subtracts the owner
    construction value before clamping at zero. With the default
    coefficients that increment is zero for every price at or below
    lambda + v + u, i.e. it never fires in the studied price range.
    CASE_STUDY clamps the surplus of the price over location plus owner
    construction value, which reproduces the two-house reference
    scenarios exactly, and is the default.
    """

    CASE_STUDY = "case-study"
    PAPER_LITERAL = "paper-literal"


class KernelShape(Enum):
    RADIAL = "radial"
    GRID_SEPARABLE = "grid-separable"


class ClosingPolicy(Enum):
    """What a closing is allowed to update."""

    UPDATE_RHO = "update-rho"  # lambda and rho
    SKIP_RHO = "skip-rho"      # lambda only (house not opted in)
    SKIP_ALL = "skip-all"      # nothing (sale invisible to the estimator)


@dataclass(frozen=True)
class KernelSpec:
    """Spatial influence kernel of a closing.

    RADIAL reads only ``R`` (Euclidean cutoff); GRID_SEPARABLE reads
    ``R_x``/``R_y`` (per-axis cutoffs, factors clamped independently).
    """

    shape: KernelShape = KernelShape.GRID_SEPARABLE
    R: float = 10.0
    R_x: float = 10.0
    R_y: float = 10.0

    def __post_init__(self):
        if self.shape is KernelShape.RADIAL:
            if not self.R > 0:
                raise ModelError(f"kernel R must be > 0, got {self.R}")
        else:
            if not (self.R_x > 0 and self.R_y > 0):
                raise ModelError(
                    f"kernel R_x and R_y must be > 0, got {self.R_x}, {self.R_y}")

    @classmethod
    def grid(cls, r: float) -> "KernelSpec":
        """Separable grid kernel with the same reach on both axes."""
        return cls(KernelShape.GRID_SEPARABLE, R=r, R_x=r, R_y=r)

    @classmethod
    def radial(cls, r: float) -> "KernelSpec":
        return cls(KernelShape.RADIAL, R=r, R_x=r, R_y=r)

    @property
    def reach_x(self) -> float:
        return self.R if self.shape is KernelShape.RADIAL else self.R_x

    @property
    def reach_y(self) -> float:
        return self.R if self.shape is KernelShape.RADIAL else self.R_y


@dataclass(frozen=True)
class UpdateCoefficients:
    """Coefficients of the location-inference and adjustment updates."""

    a: float = 0.0
    b: float = 1.0
    pi_variant: PiVariant = PiVariant.CASE_STUDY

    def __post_init__(self):
        # a >= 0 and b > 0 keep 1 + a*v and a*lambda + b positive for all
        # non-negative dollar values, so the updates never divide by zero.
        if not self.a >= 0:
            raise ModelError(f"coefficient a must be >= 0, got {self.a}")
        if not self.b > 0:
            raise ModelError(f"coefficient b must be > 0, got {self.b}")


@dataclass(frozen=True)
class HouseNode:
    """Static per-house values."""

    v: Money                       # estimator's construction-features value
    u: Money                       # owner/expert construction value
    opt_in: bool                   # publicly listed by the estimator
    position: tuple[float, float]  # (x, y) in house-grid units


@dataclass
class City:
    """A set of houses, stored column-wise for vectorized updates.

    ``side`` is set when the houses form a row-major unit-spaced square
    grid (house i at column i % side, row i // side); that enables the
    boxed fast path in :func:`apply_closing`. ``distances`` optionally
    gives explicit pairwise distances (radial kernels only).
    """

    v: np.ndarray
    u: np.ndarray
    opt_in: np.ndarray
    positions: np.ndarray
    side: int | None = None
    distances: np.ndarray | None = None

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        self.opt_in = np.asarray(self.opt_in, dtype=bool)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        n = self.v.shape[0]
        if not (self.u.shape == (n,) and self.opt_in.shape == (n,)
                and self.positions.shape == (n, 2)):
            raise ModelError("city arrays must share one house count")
        if self.side is not None and self.side * self.side != n:
            raise ModelError(f"side {self.side} does not square to {n} houses")

    @property
    def n(self) -> int:
        return self.v.shape[0]

    def house(self, i: int) -> HouseNode:
        return HouseNode(float(self.v[i]), float(self.u[i]),
                         bool(self.opt_in[i]),
                         (float(self.positions[i, 0]), float(self.positions[i, 1])))


def grid_position(i: int, side: int) -> tuple[int, int]:
    """(row, col) of house ``i`` on a row-major square grid."""
    return divmod(i, side)


def grid_index(row: int, col: int, side: int) -> int:
    return row * side + col


@dataclass
class MarketState:
    """Mutable market estimates: lambda and rho per house.

    ``closings_applied`` counts :func:`apply_closing` calls since
    construction; ``lambda_clamp_events`` counts houses whose location
    value was clamped at zero after a negative update.
    """

    lam: np.ndarray
    rho: np.ndarray
    closings_applied: int = 0
    lambda_clamp_events: int = 0

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=np.float64)
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if self.lam.shape != self.rho.shape or self.lam.ndim != 1:
            raise ModelError("lambda and rho must be 1-D arrays of equal length")

    @property
    def n(self) -> int:
        return self.lam.shape[0]

    def copy(self) -> "MarketState":
        return MarketState(self.lam.copy(), self.rho.copy(),
                           self.closings_applied, self.lambda_clamp_events)


@dataclass(frozen=True)
class TransactionRecord:
    """One sale: contract day, closing day, house, and locked price."""

    contract_day: int
    closing_day: int
    house: int
    price: Money | None = None

    def __post_init__(self):
        if self.closing_day < self.contract_day:
            raise ModelError(
                f"closing day {self.closing_day} before contract day {self.contract_day}")
        if self.price is not None and not (math.isfinite(self.price) and self.price > 0):
            raise ModelError(f"price must be finite and > 0, got {self.price}")


# --------------------------------------------------------------------------
# Kernel

def _weights_from_offsets(dx: np.ndarray, dy: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Kernel weight for coordinate offsets. Single formula source for the
    scalar op, the grid template and the dense path, so all agree bitwise."""
    dx = np.abs(np.asarray(dx, dtype=np.float64))
    dy = np.abs(np.asarray(dy, dtype=np.float64))
    if spec.shape is KernelShape.RADIAL:
        d = np.sqrt(dx * dx + dy * dy)
        return np.maximum((spec.R - d) / spec.R, 0.0)
    wx = np.maximum((spec.R_x - dx) / spec.R_x, 0.0)
    wy = np.maximum((spec.R_y - dy) / spec.R_y, 0.0)
    return wx * wy


def kernel_weight(n: int, i: int, spec: KernelSpec,
                  positions: np.ndarray,
                  distances: np.ndarray | None = None) -> float:
    """Influence of a closing at house ``i`` on house ``n``, in [0, 1].

    Radial: ReLU((R - d)/R) with Euclidean d (or an explicit distance
    table). Grid-separable: the product of per-axis ReLU factors, each
    clamped independently so far corners never multiply two negatives
    into positive influence.
    """
    if distances is not None:
        if spec.shape is not KernelShape.RADIAL:
            raise ModelError("distance tables support radial kernels only")
        return float(np.maximum((spec.R - distances[n, i]) / spec.R, 0.0))
    dx = positions[n, 0] - positions[i, 0]
    dy = positions[n, 1] - positions[i, 1]
    return float(_weights_from_offsets(dx, dy, spec))


@lru_cache(maxsize=32)
def _kernel_template(shape: KernelShape, r: float, rx: float, ry: float
                     ) -> tuple[np.ndarray, int, int]:
    """Weight patch over integer offsets, for unit-spaced grid cities.

    Returns (template, bx, by) where template[by + drow, bx + dcol] is the
    weight at offset (dcol, drow); the rim at |offset| >= reach is zero.
    """
    spec = KernelSpec(shape, R=r, R_x=rx, R_y=ry)
    bx = int(math.ceil(spec.reach_x))
    by = int(math.ceil(spec.reach_y))
    dcol = np.arange(-bx, bx + 1, dtype=np.float64)
    drow = np.arange(-by, by + 1, dtype=np.float64)
    dx, dy = np.meshgrid(dcol, drow)
    tpl = _weights_from_offsets(dx, dy, spec)
    tpl.setflags(write=False)
    return tpl, bx, by


# --------------------------------------------------------------------------
# Prices and increments

def price_opted_in(lam_i: Money, v_i: Money, u_i: Money, rho_i: Money) -> Money:
    """Sale price of a publicly listed house: location plus the larger of
    the estimator's and the owner's construction value. Never below the
    public estimate lam + v (seller's market)."""
    return lam_i + max(v_i, u_i + rho_i)


def price_opted_out(lam_i: Money, u_i: Money, rho_i: Money) -> Money:
    """Sale price of a non-listed house: the owner's own valuation on top
    of the public location estimate. May be below lam + v."""
    return lam_i + u_i + rho_i


def inferred_location(p: Money, v_i: Money, coeffs: UpdateCoefficients) -> Money:
    """Location value the estimator reads out of a closing price."""
    return (p - coeffs.b * v_i) / (1.0 + coeffs.a * v_i)


def lambda_increment(n: int, closing: TransactionRecord, state: MarketState,
                     houses: City, kernel: KernelSpec,
                     coeffs: UpdateCoefficients) -> Money:
    """Signed location-value delta at house ``n`` from one closing."""
    i = closing.house
    w = kernel_weight(n, i, kernel, houses.positions, houses.distances)
    core = inferred_location(closing.price, houses.v[i], coeffs) - state.lam[i]
    return core * w


def _rho_core(price: Money, lam_i: Money, v_i: Money, u_i: Money,
              coeffs: UpdateCoefficients) -> Money:
    if coeffs.pi_variant is PiVariant.PAPER_LITERAL:
        public = lam_i + v_i
        return max((price - public) / (coeffs.a * lam_i + coeffs.b) - u_i, 0.0)
    return max(price - lam_i - u_i, 0.0)


def rho_increment(n: int, closing: TransactionRecord, state: MarketState,
                  houses: City, kernel: KernelSpec,
                  coeffs: UpdateCoefficients) -> Money:
    """Non-negative owner-adjustment delta at house ``n`` from one closing."""
    i = closing.house
    w = kernel_weight(n, i, kernel, houses.positions, houses.distances)
    core = _rho_core(closing.price, state.lam[i], houses.v[i], houses.u[i], coeffs)
    return core * w


def policy_for(opt_in: bool, optout_updates_lambda: bool = True) -> ClosingPolicy:
    """Closing policy for a house given its opt-in flag and whether
    non-listed sale prices are visible to the estimator at all."""
    if opt_in:
        return ClosingPolicy.UPDATE_RHO
    return ClosingPolicy.SKIP_RHO if optout_updates_lambda else ClosingPolicy.SKIP_ALL


def apply_closing(state: MarketState, closing: TransactionRecord, houses: City,
                  kernel: KernelSpec, coeffs: UpdateCoefficients,
                  policy: ClosingPolicy = ClosingPolicy.UPDATE_RHO) -> MarketState:
    """Apply one closing's updates to ``state`` in place.

    Every house within kernel support of the sold house receives its
    lambda increment (and rho increment under UPDATE_RHO); houses outside
    the support are untouched. Both increment cores are scalars read from
    the pre-update state, so the in-place writes are equivalent to a
    two-pass compute-then-write sweep. Negative lambda results clamp at
    zero and are counted in ``lambda_clamp_events``.
    """
    if closing.price is None:
        raise ModelError("closing has no locked price")
    i = closing.house
    if not 0 <= i < houses.n:
        raise ModelError(f"unknown house {i}")
    p = float(closing.price)

    if policy is ClosingPolicy.SKIP_ALL:
        state.closings_applied += 1
        return state

    lam_i = float(state.lam[i])  # pre-update snapshot; read before any write
    lam_core = inferred_location(p, float(houses.v[i]), coeffs) - lam_i
    rho_core = (_rho_core(p, lam_i, float(houses.v[i]), float(houses.u[i]), coeffs)
                if policy is ClosingPolicy.UPDATE_RHO else 0.0)

    if houses.side is not None and houses.distances is None:
        _apply_boxed(state, i, lam_core, rho_core, houses.side, kernel)
    else:
        _apply_dense(state, i, lam_core, rho_core, houses, kernel)

    state.closings_applied += 1
    return state


def _apply_boxed(state: MarketState, i: int, lam_core: float, rho_core: float,
                 side: int, kernel: KernelSpec) -> None:
    """Fast path: slice the cached weight template over the support box."""
    tpl, bx, by = _kernel_template(kernel.shape, kernel.R, kernel.R_x, kernel.R_y)
    row, col = divmod(i, side)
    r0, r1 = max(0, row - by), min(side - 1, row + by)
    c0, c1 = max(0, col - bx), min(side - 1, col + bx)
    patch = tpl[by + (r0 - row): by + (r1 - row) + 1,
                bx + (c0 - col): bx + (c1 - col) + 1]

    lam2d = state.lam.reshape(side, side)
    box = lam2d[r0:r1 + 1, c0:c1 + 1]
    box += lam_core * patch
    if lam_core < 0.0:
        neg = box < 0.0
        clamped = int(np.count_nonzero(neg))
        if clamped:
            state.lambda_clamp_events += clamped
            np.maximum(box, 0.0, out=box)

    if rho_core != 0.0:
        rho2d = state.rho.reshape(side, side)
        rho2d[r0:r1 + 1, c0:c1 + 1] += rho_core * patch


def _apply_dense(state: MarketState, i: int, lam_core: float, rho_core: float,
                 houses: City, kernel: KernelSpec) -> None:
    """General path: weights against every house, from positions or an
    explicit distance table."""
    if houses.distances is not None:
        if kernel.shape is not KernelShape.RADIAL:
            raise ModelError("distance tables support radial kernels only")
        w = np.maximum((kernel.R - houses.distances[:, i]) / kernel.R, 0.0)
    else:
        dx = houses.positions[:, 0] - houses.positions[i, 0]
        dy = houses.positions[:, 1] - houses.positions[i, 1]
        w = _weights_from_offsets(dx, dy, kernel)

    state.lam += lam_core * w
    if lam_core < 0.0:
        neg = state.lam < 0.0
        clamped = int(np.count_nonzero(neg))
        if clamped:
            state.lambda_clamp_events += clamped
            state.lam[neg] = 0.0
    if rho_core != 0.0:
        state.rho += rho_core * w


# --------------------------------------------------------------------------
# Replay solver

@dataclass
class ReppProblem:
    """A replayable market evolution: houses, initial estimates, and an
    ordered transaction vector whose prices may be absent on input."""

    houses: City
    initial_state: MarketState
    transactions: list[TransactionRecord]
    kernel: KernelSpec = field(default_factory=KernelSpec)
    coefficients: UpdateCoefficients = field(default_factory=UpdateCoefficients)
    optout_updates_lambda: bool = True

    def validate(self) -> None:
        if self.initial_state.n != self.houses.n:
            raise ModelError("state and city house counts differ")
        prev_close = None
        for k, t in enumerate(self.transactions):
            if not 0 <= t.house < self.houses.n:
                raise ModelError(f"transaction {k} references unknown house {t.house}")
            if prev_close is not None and t.closing_day < prev_close:
                raise ModelError(
                    f"transaction {k} closes on day {t.closing_day}, "
                    f"before the previous closing on day {prev_close}")
            prev_close = t.closing_day


def solve_repp(problem: ReppProblem) -> tuple[MarketState, list[TransactionRecord]]:
    """Replay all transactions and return the final state plus the fully
    priced transaction vector.

    Absent prices are computed from the state after the last transaction
    closing strictly before the contract day. The sweep realizes that by
    ordering each day's price locks before that day's closings; same-day
    closings apply in input order. Runs in O(|T| * kernel support), never
    worse than O(|T| * N).
    """
    problem.validate()
    state = problem.initial_state.copy()
    txs = problem.transactions
    priced: list[TransactionRecord | None] = [None] * len(txs)

    # Stable merge of price locks and closings: within a day, locks first,
    # so a closing never informs a same-day contract.
    events = sorted(
        [(t.contract_day, 0, k) for k, t in enumerate(txs)]
        + [(t.closing_day, 1, k) for k, t in enumerate(txs)],
        key=lambda e: (e[0], e[1]),
    )

    for _, kind, k in events:
        t = txs[k]
        i = t.house
        if kind == 0:
            if t.price is not None:
                priced[k] = t
            else:
                if problem.houses.opt_in[i]:
                    p = price_opted_in(float(state.lam[i]), float(problem.houses.v[i]),
                                       float(problem.houses.u[i]), float(state.rho[i]))
                else:
                    p = price_opted_out(float(state.lam[i]), float(problem.houses.u[i]),
                                        float(state.rho[i]))
                priced[k] = TransactionRecord(t.contract_day, t.closing_day, i, p)
        else:
            policy = policy_for(bool(problem.houses.opt_in[i]),
                                problem.optout_updates_lambda)
            apply_closing(state, priced[k], problem.houses, problem.kernel,
                          problem.coefficients, policy)

    return state, [r for r in priced if r is not None]
