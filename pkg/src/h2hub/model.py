"""Market primitives: calibration data, demand, penetration and member profits.

Units used throughout the package: quantities in kilotonnes (kt), prices and
unit costs in $/kg, money in millions of dollars (M$).  With these units a
margin in $/kg times a quantity in kt is directly M$, and a curvature quoted
in $/t^2 carries over numerically to M$/kt^2.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain of a market function."""


class HydrogenType(enum.IntEnum):
    GREEN = 0
    BLUE = 1
    GREY = 2

    @property
    def label(self) -> str:
        return self.name.lower()


class Producer(enum.IntEnum):
    SHP = 0
    CHPE = 1

    @property
    def label(self) -> str:
        return self.name


TYPES = tuple(HydrogenType)
PRODUCERS = tuple(Producer)

# Relative size of the price-dependent demand term at which a channel is
# considered choked.
CHOKE_TOL = 1e-12


def as_type(value) -> HydrogenType:
    if isinstance(value, HydrogenType):
        return value
    if isinstance(value, str):
        return HydrogenType[value.upper()]
    return HydrogenType(int(value))


def as_producer(value) -> Producer:
    if isinstance(value, Producer):
        return value
    if isinstance(value, str):
        return Producer[value.upper()]
    return Producer(int(value))


def _per_period(value, horizon: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(horizon, float(arr))
    if arr.shape != (horizon,):
        raise DomainError(f"{name}: expected {horizon} periods, got shape {arr.shape}")
    return arr


def _broadcast_last(value, shape: tuple[int, ...], name: str) -> np.ndarray:
    """Broadcast a value given without a trailing period axis over the horizon."""
    arr = np.asarray(value, dtype=float)
    if arr.shape == shape:
        return arr
    if arr.shape == shape[:-1]:
        return np.repeat(arr[..., None], shape[-1], axis=-1)
    raise DomainError(f"{name}: expected shape {shape} or {shape[:-1]}, got {arr.shape}")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MarketCalibration:
    """All exogenous inputs of the market, per hydrogen type, producer and period.

    Array axes are ordered (type, producer, period) following ``HydrogenType``
    and ``Producer``.  Per-type inputs given without a period axis are
    broadcast over the horizon.
    """

    horizon: int
    theta: float  # M$/kt^2
    d0: np.ndarray  # [type, t] kt
    r0: float
    rl: np.ndarray  # [t]
    gamma: float  # M$/day^2
    rho: float  # M$ per day per ln(kt)
    lead_time: np.ndarray  # [producer] days
    q: np.ndarray  # [t] $/kg
    beta_pen: float
    b: np.ndarray  # [type, t]
    s1: np.ndarray  # [type]
    s2: np.ndarray  # [type]
    tau: float  # days
    k: np.ndarray  # [type, producer, t] kt
    alpha: np.ndarray  # [t]
    c: np.ndarray  # [type, producer, t] $/kg
    delta: np.ndarray  # [t]
    vartheta: float
    start_year: int = 2026
    demand_index: np.ndarray | None = None  # [t], dimensionless market-size index

    def __post_init__(self):
        T = int(self.horizon)
        if T < 1:
            raise DomainError("horizon must be at least 1")
        object.__setattr__(self, "horizon", T)
        for name in ("theta", "r0", "gamma", "rho", "beta_pen", "tau", "vartheta"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "start_year", int(self.start_year))
        set_ = lambda n, v: object.__setattr__(self, n, _frozen(v))
        set_("d0", _broadcast_last(self.d0, (3, T), "d0"))
        set_("b", _broadcast_last(self.b, (3, T), "b"))
        set_("k", _broadcast_last(self.k, (3, 2, T), "k"))
        set_("c", _broadcast_last(self.c, (3, 2, T), "c"))
        for name in ("rl", "q", "alpha", "delta"):
            set_(name, _per_period(getattr(self, name), T, name))
        set_("lead_time", np.asarray(self.lead_time, dtype=float).reshape(2))
        set_("s1", np.asarray(self.s1, dtype=float).reshape(3))
        set_("s2", np.asarray(self.s2, dtype=float).reshape(3))
        if self.demand_index is None:
            set_("demand_index", self.d0.sum(axis=0))
        else:
            set_("demand_index", _per_period(self.demand_index, T, "demand_index"))

    # -- convenience -------------------------------------------------------
    @property
    def years(self) -> list[int]:
        return [self.start_year + t for t in range(self.horizon)]

    def replace(self, **changes) -> "MarketCalibration":
        return dataclasses.replace(self, **changes)

    def active(self, i, j, t: int) -> bool:
        """Whether producer ``j`` has any capacity for type ``i`` at ``t``."""
        return bool(self.k[as_type(i), as_producer(j), t] > 0)

    def sellers(self, i, t: int) -> tuple[Producer, ...]:
        return tuple(j for j in PRODUCERS if self.active(i, j, t))

    def validate(self) -> list[str]:
        """Return every violated invariant as a readable message (empty if valid)."""
        issues = []

        def check(ok, msg):
            if not bool(ok):
                issues.append(msg)

        check(self.theta > 0, f"theta must be > 0 (got {self.theta})")
        check(self.rho > 0, f"rho must be > 0 (got {self.rho})")
        check(self.gamma > 0, f"gamma must be > 0 (got {self.gamma})")
        check(self.tau > 0, f"tau must be > 0 (got {self.tau})")
        check(0 < self.vartheta < 1, f"vartheta must lie in (0, 1) (got {self.vartheta})")
        check(0 < self.r0 < 1, f"r0 must lie in (0, 1) (got {self.r0})")
        check(self.beta_pen >= 0, f"beta_pen must be >= 0 (got {self.beta_pen})")
        check(np.all(self.d0 > 0), "d0 must be > 0 for every type and period")
        check(np.all(self.q > 0), "q must be > 0 in every period")
        check(np.all((self.delta >= 0) & (self.delta < 1)), "delta must lie in [0, 1) in every period")
        check(np.all((self.rl >= 0) & (self.rl <= 1)), "rl must lie in [0, 1] in every period")
        check(np.all(self.s1 > 0), "s1 must be > 0 for every type")
        check(np.all(self.s2 >= 0), "s2 must be >= 0 for every type")
        check(np.all(self.k >= 0), "capacities k must be >= 0")
        check(np.all(self.c >= 0), "unit costs c must be >= 0")
        check(np.all(self.lead_time >= 0), "lead times must be >= 0")
        check(
            self.lead_time[Producer.SHP] < self.lead_time[Producer.CHPE],
            "lead_time.SHP must be shorter than lead_time.CHPE",
        )
        g, bl = HydrogenType.GREY, HydrogenType.BLUE
        if np.all(self.k[g, Producer.CHPE] > 0) and np.all(self.k[bl, Producer.CHPE] > 0):
            check(
                np.all(self.c[g, Producer.CHPE] < self.c[bl, Producer.CHPE]),
                "c.grey.CHPE must be below c.blue.CHPE in every period",
            )
        for name in ("theta", "gamma", "rho", "tau", "vartheta", "r0", "beta_pen"):
            check(math.isfinite(getattr(self, name)), f"{name} must be finite")
        for name in ("d0", "rl", "q", "b", "k", "alpha", "c", "delta"):
            check(np.all(np.isfinite(getattr(self, name))), f"{name} must be finite")
        return issues


@dataclass(frozen=True)
class MarketState:
    t: int
    r: float

    def __post_init__(self):
        if not math.isfinite(self.r) or self.r < 0:
            raise DomainError(f"penetration must be finite and >= 0 (got {self.r})")


@dataclass(frozen=True)
class MemberProfits:
    shp: float = 0.0
    chpe: float = 0.0
    hub: float = 0.0

    @property
    def producers(self) -> float:
        return self.shp + self.chpe

    @property
    def total(self) -> float:
        return self.shp + self.chpe + self.hub

    def __add__(self, other: "MemberProfits") -> "MemberProfits":
        return MemberProfits(self.shp + other.shp, self.chpe + other.chpe, self.hub + other.hub)

    def as_dict(self) -> dict[str, float]:
        return {"SHP": self.shp, "CHPE": self.chpe, "HUB": self.hub}


# -- demand -----------------------------------------------------------------


def effective_lead_time(cal: MarketCalibration, j, y: float) -> float:
    """Lead time seen by customers of producer ``j``; only CHPE can invest in ``y``."""
    j = as_producer(j)
    lt = float(cal.lead_time[j])
    if j is Producer.SHP:
        return lt
    if y < 0 or y > lt:
        raise DomainError(f"lead-time reduction y={y} outside [0, {lt}]")
    return max(lt - y, 0.0)


@dataclass(frozen=True)
class DemandCurve:
    """One demand channel ``Q = scale * (floor + m * exp(-a * x**e))``."""

    scale: float
    floor: float
    a: float
    e: float
    m: float

    @classmethod
    def for_channel(cls, cal: MarketCalibration, state: MarketState, i, lead: float) -> "DemandCurve":
        i = as_type(i)
        t = state.t
        return cls(
            scale=float(cal.d0[i, t]),
            floor=cal.beta_pen * state.r,
            a=float(cal.s1[i] / cal.q[t] ** cal.vartheta),
            e=cal.vartheta + 1.0,
            m=math.exp(-cal.s2[i] * lead / cal.tau),
        )

    @property
    def lower(self) -> float:
        """Demand as the price grows without bound."""
        return self.scale * self.floor

    @property
    def upper(self) -> float:
        """Demand at zero price."""
        return self.scale * (self.floor + self.m)

    @property
    def choke_price(self) -> float:
        return (-math.log(CHOKE_TOL) / self.a) ** (1.0 / self.e)

    def quantity(self, price: float) -> float:
        if price < 0:
            raise DomainError(f"price must be >= 0 (got {price})")
        return self.scale * (self.floor + self.m * math.exp(-self.a * price**self.e))

    def dquantity(self, price: float) -> float:
        if price <= 0:
            return 0.0
        ex = math.exp(-self.a * price**self.e)
        return -self.scale * self.m * ex * self.a * self.e * price ** (self.e - 1.0)

    def price(self, quantity: float) -> float:
        lo, hi = self.lower, self.upper
        if not lo < quantity <= hi * (1 + 1e-14):
            raise DomainError(f"quantity {quantity} outside invertible band ({lo}, {hi}]")
        u = -math.log((quantity / self.scale - self.floor) / self.m)
        return (max(u, 0.0) / self.a) ** (1.0 / self.e)

    def dprice(self, quantity: float) -> float:
        """Slope of inverse demand."""
        x = self.price(quantity)
        return 1.0 / self.dquantity(x) if x > 0 else -math.inf


def demand(cal: MarketCalibration, state: MarketState, i, j, price: float, y: float = 0.0) -> float:
    """Quantity demanded from producer ``j`` for type ``i`` at ``price``."""
    curve = DemandCurve.for_channel(cal, state, i, effective_lead_time(cal, j, y))
    return curve.quantity(price)


def inverse_demand(cal: MarketCalibration, state: MarketState, i, j, quantity: float, y: float = 0.0) -> float:
    """Price at which producer ``j``'s channel absorbs exactly ``quantity``."""
    curve = DemandCurve.for_channel(cal, state, i, effective_lead_time(cal, j, y))
    return curve.price(quantity)


def average_price(x_shp: float | None, x_chpe: float | None) -> float:
    """Mean offered price; a type sold by one producer takes that producer's price."""
    prices = [p for p in (x_shp, x_chpe) if p is not None and not math.isnan(p)]
    if not prices:
        raise DomainError("no producer offers this type")
    if any(p < 0 for p in prices):
        raise DomainError("prices must be >= 0")
    return sum(prices) / len(prices)


@dataclass(frozen=True)
class PenetrationStep:
    state: MarketState
    raw: float  # value before the lower clamp
    clamped: bool


def penetration_step(
    cal: MarketCalibration, state: MarketState, w: float, avg_prices: Sequence[float | None]
) -> PenetrationStep:
    """Advance hub penetration one period.

    ``avg_prices`` is indexed by hydrogen type; ``None`` marks a type with no
    sales, which contributes nothing to the price term.
    """
    if not 0.0 <= w <= 1.0:
        raise DomainError(f"green share must lie in [0, 1] (got {w})")
    t = state.t
    price_term = 0.0
    for i, x in zip(TYPES, avg_prices):
        if x is None:
            continue
        if not x > 0:
            raise DomainError(f"average price of {i.label} must be > 0 (got {x})")
        price_term += cal.b[i, t] * math.log(x)
    raw = (1.0 - cal.rl[t]) * (state.r + cal.alpha[t] * w - price_term)
    return PenetrationStep(MarketState(t + 1, max(raw, 0.0)), raw, raw < 0)


def green_share(Q) -> float:
    """Green fraction of the hub's total volume; ``Q`` is indexed [type][producer]."""
    Q = np.asarray(Q, dtype=float)
    total = Q.sum()
    if not total > 0:
        raise DomainError("total production must be positive")
    return float(Q[HydrogenType.GREEN].sum() / total)


# -- profits ----------------------------------------------------------------


def delivery_penalty(cal: MarketCalibration, y: float) -> float:
    return cal.gamma * (cal.lead_time[Producer.CHPE] - y - cal.tau) ** 2


def profit_shp(cal: MarketCalibration, t: int, i, price: float, quantity: float) -> float:
    if quantity < 0:
        raise DomainError("quantity must be >= 0")
    i = as_type(i)
    d = cal.delta[t]
    return (1 - d) * (price - cal.c[i, Producer.SHP, t]) * quantity - cal.theta * quantity**2


def profit_chpe(cal: MarketCalibration, t: int, i, price: float, quantity: float, y: float) -> float:
    if quantity < 0:
        raise DomainError("quantity must be >= 0")
    if not 0 <= y <= cal.lead_time[Producer.CHPE]:
        raise DomainError(f"y={y} outside [0, lt_CHPE]")
    i = as_type(i)
    d = cal.delta[t]
    margin = (1 - d) * (price - cal.c[i, Producer.CHPE, t]) * quantity if quantity > 0 else 0.0
    return margin - delivery_penalty(cal, y) - cal.rho * y * math.log(quantity + 1.0)


def profit_hub(cal: MarketCalibration, t: int, sales: Iterable[tuple[float, float, float]]) -> float:
    """Commission on producer margins; ``sales`` holds (price, quantity, unit cost) triples."""
    total = 0.0
    for price, quantity, cost in sales:
        if quantity > 0:
            total += (price - cost) * quantity
    return float(cal.delta[t] * total)
