"""Cournot and collusion equilibria, lead-time investment and a grid oracle.

Two stationarity models are available through ``SolverSettings.mode``:

``"paper"`` (default)
    Producers treat the market price as given at the quantity stage, so each
    first-order condition reads ``(1 - delta) * (P - c) = MC(Q)`` with
    ``MC_SHP = 2 theta Q`` and ``MC_CHPE = rho y / (Q + 1)``.

``"full"``
    Non-paper extension: the inverse-demand slope enters marginal revenue,
    ``(1 - delta) * (P + P'(Q) Q - c) = MC(Q)``.  With a positive penetration
    floor in demand a channel monopolist can raise price without bound, so
    this mode is only well posed when the floor is small or covered by rivals.

Cournot (``Ct``) clears every type on a single demand curve at a common price
``P(Q_SHP + Q_CHPE)``.  Collusion (``Cn``) lets each producer sell on its own
demand channel ``x_j = P_j(Q_j)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import optimize

from .model import (
    PRODUCERS,
    TYPES,
    DemandCurve,
    DomainError,
    HydrogenType,
    MarketCalibration,
    MarketState,
    MemberProfits,
    Producer,
    as_type,
    average_price,
    delivery_penalty,
    effective_lead_time,
    green_share,
    profit_chpe,
    profit_hub,
    profit_shp,
)


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(message)
        self.residual = residual


class Regime(str, enum.Enum):
    CT = "Ct"
    CN = "Cn"
    CO = "Co"

    @classmethod
    def parse(cls, value) -> "Regime":
        if isinstance(value, Regime):
            return value
        for r in cls:
            if r.value.lower() == str(value).lower():
                return r
        raise ValueError(f"unknown regime {value!r}")


@dataclass(frozen=True)
class SolverSettings:
    tolerance: float = 1e-10
    max_iterations: int = 200
    damping: float = 0.5
    oracle_grid: int = 400
    mode: str = "paper"
    scan_points: int = 96
    lead_scan_points: int = 41

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.oracle_grid < 2:
            raise ValueError("oracle_grid must be >= 2")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.mode not in ("paper", "full"):
            raise ValueError("mode must be 'paper' or 'full'")


DEFAULT_SETTINGS = SolverSettings()


@dataclass(frozen=True)
class TypeSolution:
    """Equilibrium of one hydrogen type under one regime.

    Tuples are indexed by ``Producer``.  ``price`` is ``None`` for a producer
    without capacity.  ``binding`` flags are ``None`` for interior solutions or
    one of ``"capacity"``, ``"shutdown"``, ``"floor"`` or ``"inactive"``.
    """

    type: HydrogenType
    regime: Regime
    y: float
    quantity: tuple[float, float]
    price: tuple[float | None, float | None]
    binding: tuple[str | None, str | None]
    foc_residual: tuple[float, float]
    multiplicity: int = 1

    @property
    def total(self) -> float:
        return self.quantity[0] + self.quantity[1]

    @property
    def average_price(self) -> float | None:
        prices = [p for j, p in zip(PRODUCERS, self.price) if p is not None and self.binding[j] != "inactive"]
        return average_price(*(prices + [None] * (2 - len(prices)))) if prices else None

    def interior(self, j) -> bool:
        return self.binding[j] is None


# -- marginal costs and first-order conditions -------------------------------


def _margin_factor(cal: MarketCalibration, t: int) -> float:
    return 1.0 - float(cal.delta[t])


def marginal_cost(cal: MarketCalibration, j, quantity: float, y: float) -> float:
    if Producer(j) is Producer.SHP:
        return 2.0 * cal.theta * quantity
    return cal.rho * y / (quantity + 1.0)


def foc_value(
    cal: MarketCalibration, t: int, i, j, price: float, quantity: float, y: float, slope: float = 0.0
) -> tuple[float, float]:
    """First-order condition value and its natural scale.

    ``slope`` is ``dP/dQ`` for the full mode and zero for the paper mode.
    """
    c = cal.c[as_type(i), j, t]
    lhs = _margin_factor(cal, t) * (price + slope * quantity - c)
    rhs = marginal_cost(cal, j, quantity, y)
    return lhs - rhs, max(abs(lhs), abs(rhs), 1e-300)


def relative_residual(value: float, scale: float) -> float:
    return abs(value) / scale


def chpe_switch_price(cal: MarketCalibration, t: int, i, y: float) -> float:
    """Price at which CHPE, taking the price as given, is indifferent between selling
    nothing and selling its whole capacity.

    CHPE's payoff is convex in its own quantity at a fixed price (the investment
    term is concave in Q and enters with a minus sign), so its best response is
    zero below this price and capacity above it.
    """
    i = as_type(i)
    k = float(cal.k[i, Producer.CHPE, t])
    c = float(cal.c[i, Producer.CHPE, t])
    if k <= 0:
        return math.inf
    return c + cal.rho * y * math.log(k + 1.0) / (_margin_factor(cal, t) * k)


def _producer_profit(cal, t, i, j, price, quantity, y) -> float:
    if Producer(j) is Producer.SHP:
        return profit_shp(cal, t, i, price, quantity)
    return profit_chpe(cal, t, i, price, quantity, y)


# -- root bracketing ----------------------------------------------------------


def _bracketed_roots(fn: Callable[[float], float], grid: np.ndarray, xtol: float) -> list[float]:
    vals = np.array([fn(p) for p in grid])
    roots = []
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa == 0.0:
            roots.append(float(a))
        elif fa * fb < 0:
            roots.append(optimize.brentq(fn, a, b, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500))
    if vals[-1] == 0.0:
        roots.append(float(grid[-1]))
    return roots


def _price_grid(lo: float, hi: float, n: int, extra=()) -> np.ndarray:
    pts = set(np.linspace(lo, hi, n).tolist())
    # dense near the low end where capacity and cost kinks cluster
    pts.update((lo + (hi - lo) * np.geomspace(1e-6, 1.0, n // 2)).tolist())
    pts.update(p for p in extra if lo < p < hi)
    return np.array(sorted(pts))


# -- own-channel (collusion) solution ------------------------------------------


@dataclass(frozen=True)
class ChannelSolution:
    quantity: float
    price: float | None
    binding: str | None
    residual: float
    roots: int


def channel_curve(cal, state, i, j, y) -> DemandCurve:
    return DemandCurve.for_channel(cal, state, i, effective_lead_time(cal, j, y))


def solve_channel(
    cal: MarketCalibration, state: MarketState, i, j, y: float, settings: SolverSettings = DEFAULT_SETTINGS
) -> ChannelSolution:
    """Own-channel optimum of producer ``j`` selling type ``i``."""
    i, j = as_type(i), Producer(j)
    t = state.t
    k = float(cal.k[i, j, t])
    if k <= 0:
        return ChannelSolution(0.0, None, "inactive", 0.0, 0)
    y_j = y if j is Producer.CHPE else 0.0
    curve = channel_curve(cal, state, i, j, y_j)
    c = float(cal.c[i, j, t])
    choke = curve.choke_price
    if choke <= c:
        return ChannelSolution(0.0, choke, "shutdown", 0.0, 0)

    full = settings.mode == "full"

    def residual(p: float) -> float:
        Q = curve.quantity(p)
        slope = curve.dprice(Q) if full and p > 0 else 0.0
        return foc_value(cal, t, i, j, p, Q, y_j, slope)[0]

    if k <= curve.quantity(choke):
        # capacity below what the market absorbs even at the choke price
        p = curve.price(k) if k > curve.lower else choke
        return ChannelSolution(k, min(p, choke), "capacity", 0.0, 0)
    p_cap = curve.price(k) if k < curve.upper else 0.0

    if j is Producer.CHPE and not full:
        # convex price-taking payoff: the best response is a corner whenever one clears
        p_sw = chpe_switch_price(cal, t, i, y_j)
        corners = []
        if p_cap >= p_sw:
            corners.append((min(k, curve.quantity(p_cap)), p_cap, "capacity"))
        if choke <= p_sw:
            corners.append((0.0, choke, "shutdown"))
        if corners:
            Q, p, flag = max(corners, key=lambda cand: _producer_profit(cal, t, i, j, cand[1], cand[0], y_j))
            return ChannelSolution(Q, p, flag, 0.0, len(corners))

    grid = _price_grid(p_cap, choke, settings.scan_points, extra=(c,))
    roots = _bracketed_roots(residual, grid, xtol=settings.tolerance * 1e-4)
    candidates: list[tuple[float, float, str | None]] = [(curve.quantity(p), p, None) for p in roots]
    if residual(p_cap) > 0 and p_cap > 0:
        candidates.append((k, p_cap, "capacity"))
    if residual(choke) < 0:
        margin = _margin_factor(cal, t) * (choke - c)
        q_floor = 0.0
        if j is Producer.SHP and cal.theta > 0 and margin > 0:
            q_floor = min(margin / (2 * cal.theta), curve.quantity(choke))
        candidates.append((q_floor, choke, "floor"))
    if j is Producer.CHPE and _margin_factor(cal, t) * (choke - c) <= cal.rho * y_j:
        candidates.append((0.0, choke, "shutdown"))
    if not candidates:
        raise ConvergenceError(f"no stationary point for {j.label}/{i.label} at t={t}")

    best = max(candidates, key=lambda cand: _producer_profit(cal, t, i, j, cand[1], cand[0], y_j))
    Q, p, flag = best
    if flag is None:
        slope = curve.dprice(Q) if full else 0.0
        res = relative_residual(*foc_value(cal, t, i, j, p, Q, y_j, slope))
    else:
        res = 0.0
    return ChannelSolution(Q, p, flag, res, len(roots))


def collusion_optimum(
    cal: MarketCalibration, state: MarketState, i, y: float, settings: SolverSettings = DEFAULT_SETTINGS
) -> TypeSolution:
    """Joint optimum with each producer pricing on its own demand channel.

    The joint objective separates by channel, so each producer's condition is
    solved independently.
    """
    i = as_type(i)
    sols = [solve_channel(cal, state, i, j, y, settings) for j in PRODUCERS]
    return TypeSolution(
        type=i,
        regime=Regime.CN,
        y=y,
        quantity=(sols[0].quantity, sols[1].quantity),
        price=(sols[0].price, sols[1].price),
        binding=(sols[0].binding, sols[1].binding),
        foc_residual=(sols[0].residual, sols[1].residual),
        multiplicity=max(1, max(s.roots for s in sols)),
    )


# -- common-price (Cournot) solution ---------------------------------------------


def market_curve(cal: MarketCalibration, state: MarketState, i, y: float) -> DemandCurve:
    """Single demand curve on which Cournot output of type ``i`` clears.

    The lead time seen by the market is the longest effective lead time among
    producers with capacity for the type.
    """
    i = as_type(i)
    leads = [effective_lead_time(cal, j, y if j is Producer.CHPE else 0.0) for j in cal.sellers(i, state.t)]
    lead = max(leads) if leads else effective_lead_time(cal, Producer.SHP, 0.0)
    return DemandCurve.for_channel(cal, state, i, lead)


def _shp_supply(cal: MarketCalibration, t: int, i, price: float) -> float:
    """SHP's price-taking best response; its payoff is concave so this is unique."""
    k = float(cal.k[i, Producer.SHP, t])
    f = _margin_factor(cal, t)
    if k <= 0 or f <= 0:
        return 0.0
    return min(max(f * (price - cal.c[i, Producer.SHP, t]) / (2 * cal.theta), 0.0), k)


def _increasing_root(fn, lo: float, hi: float, xtol: float) -> float | None:
    flo, fhi = fn(lo), fn(hi)
    if flo > 0 or fhi < 0:
        return None
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    return optimize.brentq(fn, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)


def _cournot_paper(cal, state, i, y, settings) -> TypeSolution:
    """Common-price clearing with each producer on a stationary or corner point.

    SHP's condition is inverted into a supply response.  CHPE's payoff is
    convex in its own quantity at a given price, so its best response is zero
    or full capacity depending on the side of ``chpe_switch_price`` the
    clearing price falls.  Both corners are cleared and kept when they are best
    responses; the interior stationary point of the first-order condition is
    used only when neither corner is.
    """
    t = state.t
    curve = market_curve(cal, state, i, y)
    choke = curve.choke_price
    f = _margin_factor(cal, t)
    c_c = float(cal.c[i, Producer.CHPE, t])
    k_c = float(cal.k[i, Producer.CHPE, t])
    ry = cal.rho * y
    xtol = settings.tolerance * 1e-4

    def clear(q_chpe):
        return lambda p: _shp_supply(cal, t, i, p) + q_chpe - curve.quantity(p)

    slack = 1e-12 * max(1.0, choke)
    candidates: list[tuple[float, float, str | None]] = []  # (price, q_chpe, chpe flag)
    if k_c <= 0:
        p = _increasing_root(clear(0.0), 0.0, choke, xtol)
        candidates.append((choke if p is None else p, 0.0, "inactive"))
    else:
        p_cap = _increasing_root(clear(k_c), 0.0, choke, xtol)
        if p_cap is None and clear(k_c)(choke) < 0:
            p_cap = choke  # capacity cannot cover the demand floor
        p_zero = _increasing_root(clear(0.0), 0.0, choke, xtol) if cal.k[i, Producer.SHP, t] > 0 else choke
        # corners are global best responses on either side of the switch price
        p_sw = chpe_switch_price(cal, t, i, y)
        if p_cap is not None and p_cap >= p_sw - slack:
            candidates.append((p_cap, k_c, "capacity"))
        if p_zero is not None and p_zero <= p_sw + slack:
            candidates.append((p_zero, 0.0, "shutdown"))
        if not candidates and f > 0 and ry > 0:
            # no corner clears, fall back to the stationary point of the first-order
            # condition: q = ry / (f (p - c)) - 1 lies in (0, k) for p in (x_k, x_0)
            x_k, x_0 = c_c + ry / (f * (k_c + 1.0)), c_c + ry / f
            hi = min(x_0, choke)
            if x_k < hi:
                interior = lambda p: clear(ry / (f * (p - c_c)) - 1.0)(p)
                grid = _price_grid(x_k, hi, settings.scan_points)
                for p in _bracketed_roots(interior, grid, xtol):
                    q = ry / (f * (p - c_c)) - 1.0
                    if 0 < q < k_c:
                        candidates.append((p, q, None))
        elif not candidates and f > 0 and 0 <= c_c < choke:
            # linear payoff: any quantity is stationary at p = c
            q = curve.quantity(c_c) - _shp_supply(cal, t, i, c_c)
            if 0 < q < k_c:
                candidates.append((c_c, q, None))
        if not candidates:
            # last resort: corners that are only local best responses
            tol = 1e-9 * max(1.0, abs(ry))
            if p_cap is not None and f * (p_cap - c_c) >= ry / (k_c + 1.0) - tol:
                candidates.append((p_cap, k_c, "capacity"))
            if p_zero is not None and f * (p_zero - c_c) <= ry + tol:
                candidates.append((p_zero, 0.0, "shutdown"))
    if not candidates:
        raise ConvergenceError(f"no Cournot clearing price for {as_type(i).label} at t={t}")

    def producer_total(cand):
        p, qc, _ = cand
        tot = 0.0
        if cal.k[i, Producer.SHP, t] > 0:
            tot += profit_shp(cal, t, i, p, _shp_supply(cal, t, i, p))
        if k_c > 0:
            tot += profit_chpe(cal, t, i, p, qc, y)
        return tot

    p, qc, chpe_flag = max(candidates, key=producer_total)
    qs = _shp_supply(cal, t, i, p)
    # the cleared price; inverse demand at the total agrees to root tolerance
    p_market = p
    prices, binding, residuals = [], [], []
    for j, Q in zip(PRODUCERS, (qs, qc)):
        k = float(cal.k[i, j, t])
        if k <= 0:
            prices.append(None), binding.append("inactive"), residuals.append(0.0)
            continue
        prices.append(p_market)
        if j is Producer.CHPE and chpe_flag is not None:
            binding.append(chpe_flag), residuals.append(0.0)
            continue
        val, scale = foc_value(cal, t, i, j, p_market, Q, y)
        if Q >= k * (1 - 1e-12) and val >= -scale * 1e-8:
            binding.append("capacity"), residuals.append(0.0)
        elif Q <= 0 and val <= scale * 1e-8:
            binding.append("shutdown"), residuals.append(0.0)
        else:
            binding.append(None), residuals.append(relative_residual(val, scale))
    return TypeSolution(
        type=as_type(i),
        regime=Regime.CT,
        y=y,
        quantity=(qs, qc),
        price=tuple(prices),
        binding=tuple(binding),
        foc_residual=tuple(residuals),
        multiplicity=len(candidates),
    )


def _cournot_full(cal, state, i, y, settings) -> TypeSolution:
    """Quantity competition along the market inverse demand.

    Best responses are found by scanning each producer's own payoff over
    ``[0, k_j]`` and refining the best cell, so capacity and shutdown corners
    are handled directly.  The responses are iterated Gauss-Seidel style from
    the paper-mode solution until quantities stop moving.
    """
    t = state.t
    i = as_type(i)
    start = _cournot_paper(cal, state, i, y, replace(settings, mode="paper"))
    curve = market_curve(cal, state, i, y)
    choke = curve.choke_price
    q_choke = curve.quantity(choke)

    def price_at(total):
        if total <= q_choke:
            return choke
        if total >= curve.upper:
            return 0.0
        return curve.price(total)

    def payoff(j, q, other):
        return _producer_profit(cal, t, i, j, price_at(q + other), q, y)

    def foc(j, q, other):
        total = q + other
        if not q_choke < total < curve.upper:
            return math.nan
        return foc_value(cal, t, i, j, price_at(total), q, y, curve.dprice(total))[0]

    def best_response(j, other):
        k = float(cal.k[i, j, t])
        grid = np.linspace(0.0, k, 4 * settings.scan_points + 1)
        vals = np.array([payoff(j, q, other) for q in grid])
        idx = int(np.argmax(vals))
        lo, hi = grid[max(idx - 1, 0)], grid[min(idx + 1, len(grid) - 1)]
        res = optimize.minimize_scalar(
            lambda q: -payoff(j, q, other),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": settings.tolerance * max(k, 1.0), "maxiter": settings.max_iterations},
        )
        q = float(res.x) if res.success and -res.fun >= vals[idx] else float(grid[idx])
        if lo < q < hi:
            # polish an interior response on the first-order condition
            g = lambda q: foc(j, q, other)
            if g(lo) > 0 > g(hi):
                q_root = optimize.brentq(g, lo, hi, xtol=settings.tolerance * 1e-4, maxiter=500)
                if payoff(j, q_root, other) >= payoff(j, q, other) - 1e-12 * max(1.0, abs(payoff(j, q, other))):
                    q = q_root
        return q

    active = [j for j in PRODUCERS if cal.k[i, j, t] > 0]
    quantity = [float(q) for q in start.quantity]
    scale = max(float(cal.k[i, j, t]) for j in active)
    for _ in range(settings.max_iterations):
        moved = 0.0
        for j in active:
            q = best_response(j, quantity[1 - j])
            moved = max(moved, abs(q - quantity[j]))
            quantity[j] = q
        if moved <= settings.tolerance * scale:
            break
    else:
        raise ConvergenceError(f"full-mode Cournot did not settle for {i.label} at t={t}", moved)

    total = sum(quantity)
    p = price_at(total)
    slope = curve.dprice(total) if q_choke < total < curve.upper else 0.0
    prices, binding, rel = [], [], []
    for j in PRODUCERS:
        k = float(cal.k[i, j, t])
        if k <= 0:
            prices.append(None), binding.append("inactive"), rel.append(0.0)
            continue
        prices.append(p)
        q = quantity[j]
        if q >= k * (1 - 1e-9):
            binding.append("capacity"), rel.append(0.0)
        elif q <= 1e-9 * k:
            binding.append("shutdown"), rel.append(0.0)
        else:
            binding.append(None), rel.append(relative_residual(*foc_value(cal, t, i, j, p, q, y, slope)))
    return TypeSolution(i, Regime.CT, y, tuple(quantity), tuple(prices), tuple(binding), tuple(rel))


def cournot_equilibrium(
    cal: MarketCalibration, state: MarketState, i, y: float, settings: SolverSettings = DEFAULT_SETTINGS
) -> TypeSolution:
    """Simultaneous-quantity equilibrium with a common clearing price.

    The clearing condition is solved as a one-dimensional problem in the
    common price (equivalently, in total quantity): each producer's condition
    is inverted into a supply response and every sign change of excess supply
    is bracketed and refined.  When several clearing prices exist the one with
    the highest producer profit is returned and ``multiplicity`` reports the
    count.
    """
    i = as_type(i)
    if not cal.sellers(i, state.t):
        raise DomainError(f"no producer has capacity for {i.label} at t={state.t}")
    if settings.mode == "full":
        return _cournot_full(cal, state, i, y, settings)
    return _cournot_paper(cal, state, i, y, settings)


def solve_type(cal, state, i, regime, y, settings=DEFAULT_SETTINGS) -> TypeSolution:
    regime = Regime.parse(regime)
    if regime is Regime.CT:
        return cournot_equilibrium(cal, state, i, y, settings)
    return collusion_optimum(cal, state, i, y, settings)


# -- per-type profits -------------------------------------------------------------


def type_profits(cal: MarketCalibration, t: int, sol: TypeSolution) -> MemberProfits:
    """Member profits of one type at a solved outcome."""
    i = sol.type
    shp = chpe = 0.0
    sales = []
    if sol.binding[Producer.SHP] != "inactive":
        p = sol.price[Producer.SHP]
        shp = profit_shp(cal, t, i, p, sol.quantity[Producer.SHP])
        sales.append((p, sol.quantity[Producer.SHP], cal.c[i, Producer.SHP, t]))
    if sol.binding[Producer.CHPE] != "inactive":
        p = sol.price[Producer.CHPE]
        chpe = profit_chpe(cal, t, i, p, sol.quantity[Producer.CHPE], sol.y)
        sales.append((p, sol.quantity[Producer.CHPE], cal.c[i, Producer.CHPE, t]))
    return MemberProfits(shp, chpe, profit_hub(cal, t, sales))


def chpe_period_profit(cal, state, regime, y, settings=DEFAULT_SETTINGS) -> float:
    total = 0.0
    for i in TYPES:
        if cal.k[i, Producer.CHPE, state.t] <= 0:
            continue
        sol = solve_type(cal, state, i, regime, y, settings)
        total += type_profits(cal, state.t, sol).chpe
    return total


# -- lead-time reduction -------------------------------------------------------


@dataclass(frozen=True)
class LeadChoice:
    y: float
    profit: float
    at_bound: bool


def optimal_lead_reduction(
    cal: MarketCalibration, state: MarketState, regime, settings: SolverSettings = DEFAULT_SETTINGS
) -> LeadChoice:
    """CHPE's profit-maximising lead-time reduction with re-solved equilibria.

    A coarse scan over ``[0, lt_CHPE]`` locates the best cell, which is then
    refined with bounded Brent minimisation.
    """
    regime = Regime.parse(regime)
    if regime is Regime.CO:
        regime = Regime.CN
    lt = float(cal.lead_time[Producer.CHPE])
    if not any(cal.k[i, Producer.CHPE, state.t] > 0 for i in TYPES):
        return LeadChoice(0.0, 0.0, True)

    def objective(y):
        return chpe_period_profit(cal, state, regime, float(y), settings)

    grid = np.linspace(0.0, lt, settings.lead_scan_points)
    vals = np.array([objective(y) for y in grid])
    idx = int(np.argmax(vals))
    lo, hi = grid[max(idx - 1, 0)], grid[min(idx + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(
        lambda y: -objective(y),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-9 * max(lt, 1.0), "maxiter": settings.max_iterations},
    )
    best_y, best_val = float(grid[idx]), float(vals[idx])
    if res.success and -res.fun >= best_val:
        best_y, best_val = float(res.x), float(-res.fun)
    tol = 1e-6 * max(lt, 1.0)
    return LeadChoice(best_y, best_val, best_y <= tol or best_y >= lt - tol)


# -- regime outcome ----------------------------------------------------------------


@dataclass(frozen=True)
class RegimeOutcome:
    regime: Regime
    state: MarketState
    y: float
    y_at_bound: bool
    solutions: tuple[TypeSolution | None, ...]
    profits: tuple[MemberProfits, ...]  # per type
    errors: dict = field(default_factory=dict)
    contract: object | None = None  # coordination terms for Co

    @property
    def member_profits(self) -> MemberProfits:
        total = MemberProfits()
        for p in self.profits:
            total = total + p
        return total

    @property
    def quantities(self) -> np.ndarray:
        Q = np.zeros((3, 2))
        for sol in self.solutions:
            if sol is not None:
                Q[sol.type] = sol.quantity
        return Q

    @property
    def w(self) -> float:
        return green_share(self.quantities)

    @property
    def average_prices(self) -> list[float | None]:
        return [sol.average_price if sol is not None else None for sol in self.solutions]

    @property
    def market_shares(self) -> np.ndarray:
        Q = self.quantities.sum(axis=1)
        return Q / Q.sum()

    def max_interior_residual(self) -> float:
        res = [r for s in self.solutions if s is not None for r, b in zip(s.foc_residual, s.binding) if b is None]
        return max(res, default=0.0)


def regime_outcome(
    cal: MarketCalibration,
    state: MarketState,
    regime,
    settings: SolverSettings = DEFAULT_SETTINGS,
    y: float | None = None,
) -> RegimeOutcome:
    """Solve one period under ``Ct`` or ``Cn``: lead time, per-type equilibria and profits."""
    regime = Regime.parse(regime)
    if regime is Regime.CO:
        raise ValueError("use coordination.coordinated_outcome for the Co regime")
    if y is None:
        choice = optimal_lead_reduction(cal, state, regime, settings)
        y, at_bound = choice.y, choice.at_bound
    else:
        at_bound = False
    solutions, profits, errors = [], [], {}
    for i in TYPES:
        if not cal.sellers(i, state.t):
            solutions.append(None)
            profits.append(MemberProfits())
            continue
        try:
            sol = solve_type(cal, state, i, regime, y, settings)
        except (ConvergenceError, DomainError) as exc:
            errors[i.label] = str(exc)
            solutions.append(None)
            profits.append(MemberProfits())
            continue
        solutions.append(sol)
        profits.append(type_profits(cal, state.t, sol))
    return RegimeOutcome(regime, state, y, at_bound, tuple(solutions), tuple(profits), errors)


# -- printed closed forms ---------------------------------------------------------


@dataclass(frozen=True)
class ClosedFormConstants:
    eps1: float = 0.0
    eps2: float = 0.0
    D1: float = 0.0
    D2: float = 0.0
    F1: float | None = None


@dataclass(frozen=True)
class ClosedFormReport:
    q_shp: float
    q_chpe: float
    y: float
    numeric: tuple[float, float, float] | None = None

    @property
    def divergence(self) -> tuple[float, float, float] | None:
        if self.numeric is None:
            return None
        return tuple(abs(a - b) for a, b in zip((self.q_shp, self.q_chpe, self.y), self.numeric))


def _cf_parts(cal, state, i, y):
    t = state.t
    th = cal.vartheta
    qv = cal.q[t] ** th
    s1, s2 = cal.s1[i], cal.s2[i]
    d0 = cal.d0[i, t]
    floor = d0 * cal.beta_pen * state.r
    lt = cal.lead_time[Producer.CHPE]
    f = _margin_factor(cal, t)
    a_shp = (s1 / qv) * (2 * cal.theta / f + cal.c[i, 0, t]) ** (th + 1) - (s2 / qv) * qv * (lt / cal.tau) - math.log(d0)
    base = (cal.c[i, 1, t] - cal.rho * y) / f
    with np.errstate(invalid="ignore"):
        powered = float(np.power(base, th + 1)) if base >= 0 else math.nan
    a_chpe = powered + (s1 / s1) * qv * ((lt - y) / cal.tau) - math.log(d0)
    return qv, s1, s2, floor, lt, a_shp, a_chpe


def closed_form_quantities(cal, state, i, regime, y, constants: ClosedFormConstants, rival=(None, None)):
    """Quantities from the printed closed forms (diagnostic only).

    For ``Ct`` the printed forms depend on the rival's quantity, taken from
    ``rival`` as ``(q_shp, q_chpe)``.
    """
    i = as_type(i)
    regime = Regime.parse(regime)
    qv, s1, s2, floor, lt, a_shp, a_chpe = _cf_parts(cal, state, i, y)
    with np.errstate(all="ignore"):
        if regime is Regime.CT:
            q_c_r, q_s_r = rival[1], rival[0]
            q_shp = s1 * (cal.vartheta + 1) * (q_c_r - floor) / qv + math.exp(
                (a_shp + constants.eps1) / ((s1 / qv) * (floor - q_c_r))
            ) if q_c_r is not None and q_c_r != floor else math.nan
            q_chpe = s1 * (cal.vartheta + 1) * (q_s_r - floor) / qv + math.exp(
                (a_chpe + constants.eps2) / ((qv / s1) / (q_s_r - floor))
            ) if q_s_r is not None and q_s_r != floor else math.nan
        else:
            q_shp = floor + math.exp((a_shp + constants.eps1) / (s1 / qv))
            q_chpe = floor + math.exp((a_chpe + constants.eps2) / (qv / s1)) if not math.isnan(a_chpe) else math.nan
    return q_shp, q_chpe


def closed_form_lead(cal, state, i, regime, q_chpe: float, constants: ClosedFormConstants) -> float:
    """Lead-time reduction from the printed closed form (diagnostic only)."""
    i = as_type(i)
    regime = Regime.parse(regime)
    t = state.t
    th = cal.vartheta
    qv = cal.q[t] ** th
    s1, s2 = cal.s1[i], cal.s2[i]
    lt = cal.lead_time[Producer.CHPE]
    if regime is Regime.CT:
        inner_const = constants.D2
    else:
        if constants.F1 is not None:
            inner_const = constants.F1
        else:
            floor = cal.d0[i, t] * cal.beta_pen * state.r
            ratio = (q_chpe - floor) / cal.d0[i, t]
            inner_const = (qv / s1) * math.log(ratio) if ratio > 0 else math.nan
    inner = -(s2 / s1) * qv * (lt / cal.tau - 1) - inner_const
    expo = -th / (th + 1)
    powered = inner**expo if inner > 0 else math.nan
    num = lt - cal.tau - (constants.D1 * powered - cal.rho * math.log(q_chpe + 1)) / (2 * cal.gamma)
    den = 1 + (constants.D1 * (s2 / s1 * qv) * expo * powered) / (2 * cal.gamma)
    return num / den


def closed_form_crosscheck(
    cal: MarketCalibration,
    state: MarketState,
    i,
    constants: ClosedFormConstants,
    regime=Regime.CN,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> ClosedFormReport:
    """Evaluate the printed closed forms beside the numeric solution."""
    regime = Regime.parse(regime)
    choice = optimal_lead_reduction(cal, state, regime, settings)
    sol = solve_type(cal, state, i, regime, choice.y, settings)
    q_s, q_c = closed_form_quantities(cal, state, i, regime, choice.y, constants, rival=sol.quantity)
    y_cf = closed_form_lead(cal, state, i, regime, sol.quantity[Producer.CHPE], constants)
    return ClosedFormReport(q_s, q_c, y_cf, numeric=(sol.quantity[0], sol.quantity[1], choice.y))


def backsolve_constants(cal, state, i, y: float, q_shp: float, q_chpe: float) -> ClosedFormConstants:
    """Correction constants under which the collusion closed forms reproduce given quantities."""
    i = as_type(i)
    qv, s1, s2, floor, lt, a_shp, a_chpe = _cf_parts(cal, state, i, y)
    eps1 = (s1 / qv) * math.log(q_shp - floor) - a_shp
    eps2 = (qv / s1) * math.log(q_chpe - floor) - a_chpe
    return ClosedFormConstants(eps1=eps1, eps2=eps2)


# -- grid oracle ---------------------------------------------------------------------


@dataclass(frozen=True)
class OracleResult:
    """Exhaustive grid search next to an analytic solution.

    ``gain`` is the largest improvement a producer finds by deviating to a
    grid point; ``bound`` is the payoff variation within one cell of the
    analytic point (the grid-resolution bound).  ``curvature`` holds the
    largest second difference of each payoff along its own quantity.
    """

    quantity: tuple[float, float]
    cell: tuple[float, float]
    gain: tuple[float, float]
    bound: tuple[float, float]
    curvature: tuple[float, float]

    def within_one_cell(self, analytic) -> tuple[bool, bool]:
        return tuple(abs(a - g) <= h * (1 + 1e-9) + 1e-12 for a, g, h in zip(analytic, self.quantity, self.cell))

    def nash(self) -> tuple[bool, bool]:
        return tuple(g <= b for g, b in zip(self.gain, self.bound))


def grid_oracle(
    cal: MarketCalibration,
    state: MarketState,
    i,
    y: float,
    regime,
    solution: TypeSolution | None = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> OracleResult:
    """Brute-force certificate for a quantity-stage solution on ``[0, k_j]`` grids.

    Payoffs follow the behavioural model of the solver: in paper mode prices
    are held at the analytic solution's prices while a producer varies its own
    quantity; in full mode prices move along the regime's inverse demand.
    """
    i = as_type(i)
    regime = Regime.parse(regime)
    t = state.t
    if solution is None:
        solution = solve_type(cal, state, i, regime, y, settings)
    n = settings.oracle_grid
    full = settings.mode == "full"
    curve_mkt = market_curve(cal, state, i, y) if regime is Regime.CT else None

    def payoff(j, q_own, q_other):
        if regime is Regime.CT:
            if full:
                total = q_own + q_other
                if not curve_mkt.lower < total <= curve_mkt.upper:
                    return -math.inf
                price = curve_mkt.price(total)
            else:
                price = solution.price[j]
        else:
            if full:
                curve = channel_curve(cal, state, i, j, y if j == Producer.CHPE else 0.0)
                if not curve.lower < q_own <= curve.upper:
                    return -math.inf
                price = curve.price(q_own)
            else:
                price = solution.price[j]
        return _producer_profit(cal, t, i, j, price, q_own, y)

    quantity, cell, gain, bound, curv = [], [], [], [], []
    for j in PRODUCERS:
        k = float(cal.k[i, j, t])
        other = solution.quantity[1 - j]
        if k <= 0 or solution.price[j] is None:
            quantity.append(0.0), cell.append(0.0), gain.append(0.0), bound.append(0.0), curv.append(0.0)
            continue
        grid = np.linspace(0.0, k, n)
        h = grid[1] - grid[0]
        vals = np.array([payoff(j, q, other) for q in grid])
        star = payoff(j, solution.quantity[j], other)
        near = [payoff(j, min(max(solution.quantity[j] + s * h, 0.0), k), other) for s in (-1, 1)]
        finite = vals[np.isfinite(vals)]
        with np.errstate(invalid="ignore"):
            second = np.diff(vals, 2)
        second = second[np.isfinite(second)]
        quantity.append(float(grid[int(np.argmax(vals))]))
        cell.append(h)
        gain.append(float(finite.max() - star))
        bound.append(float(max(abs(v - star) for v in near)) + 1e-9 * max(1.0, abs(star)))
        curv.append(float(second.max()) if second.size else 0.0)
    return OracleResult(tuple(quantity), tuple(cell), tuple(gain), tuple(bound), tuple(curv))
