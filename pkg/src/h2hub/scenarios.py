"""Multi-period rollouts, exogenous-shock scenarios and parameter sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .contracts import (
    BargainingPowers,
    ContractConsistencyError,
    coordinated_outcome,
    design_contract,
)
from .model import (
    PRODUCERS,
    TYPES,
    DomainError,
    MarketCalibration,
    MarketState,
    MemberProfits,
    as_producer,
    as_type,
    penetration_step,
    profit_hub,
)
from .solvers import DEFAULT_SETTINGS, ConvergenceError, Regime, RegimeOutcome, SolverSettings, regime_outcome

SCENARIOS = ("baseline", "tech_breakthrough", "policy_change", "downturn")
ALL_REGIMES = (Regime.CT, Regime.CN, Regime.CO)

# field name -> index axes before the period axis ("type", "producer"), and whether it has a period axis
_FIELDS = {
    "theta": ((), False),
    "r0": ((), False),
    "gamma": ((), False),
    "rho": ((), False),
    "beta_pen": ((), False),
    "tau": ((), False),
    "vartheta": ((), False),
    "rl": ((), True),
    "q": ((), True),
    "alpha": ((), True),
    "delta": ((), True),
    "demand_index": ((), True),
    "s1": (("type",), False),
    "s2": (("type",), False),
    "d0": (("type",), True),
    "b": (("type",), True),
    "lead_time": (("producer",), False),
    "k": (("type", "producer"), True),
    "c": (("type", "producer"), True),
}


class ScenarioError(ValueError):
    pass


# -- overrides -----------------------------------------------------------------------


@dataclass(frozen=True)
class Override:
    """Replace (or with ``scale=True`` multiply) a calibration entry.

    ``path`` is a dotted name such as ``theta``, ``s1.green``, ``b.blue`` or
    ``c.green.SHP``; trailing indices may be omitted to address every type or
    producer.  ``value`` is a scalar, a per-period list or ``{"range": [a, b]}``.
    ``periods`` restricts a time-varying entry to ``range(*periods)``.
    """

    path: str
    value: object
    periods: tuple[int, int] | None = None
    scale: bool = False


def _resolve(cal: MarketCalibration, path: str):
    name, *rest = path.split(".")
    if name not in _FIELDS:
        raise ScenarioError(f"unknown parameter {name!r}")
    axes, timed = _FIELDS[name]
    if len(rest) > len(axes):
        raise ScenarioError(f"too many indices in {path!r}")
    index = []
    for axis, key in zip(axes, rest):
        try:
            index.append(int(as_type(key)) if axis == "type" else int(as_producer(key)))
        except (KeyError, ValueError) as exc:
            raise ScenarioError(f"bad {axis} {key!r} in {path!r}") from exc
    return name, tuple(index), timed


def _override_values(value, n: int) -> np.ndarray:
    if isinstance(value, dict):
        if set(value) != {"range"}:
            raise ScenarioError(f"unsupported override value {value!r}")
        a, b = value["range"]
        return np.linspace(float(a), float(b), n)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ScenarioError(f"expected {n} values, got {arr.shape}")
    return arr


def apply_override(cal: MarketCalibration, ov: Override) -> MarketCalibration:
    name, index, timed = _resolve(cal, ov.path)
    current = getattr(cal, name)
    if np.ndim(current) == 0:
        if ov.periods is not None:
            raise ScenarioError(f"{name} has no period axis")
        new = float(current) * float(ov.value) if ov.scale else float(ov.value)
        return cal.replace(**{name: new})
    arr = np.array(current, dtype=float, copy=True)
    if timed:
        lo, hi = ov.periods if ov.periods is not None else (0, cal.horizon)
        if not 0 <= lo < hi <= cal.horizon:
            raise ScenarioError(f"period range {ov.periods} outside horizon {cal.horizon}")
        sub = arr[index] if index else arr
        target = sub[..., lo:hi]
        vals = _override_values(ov.value, hi - lo)
        sub[..., lo:hi] = target * vals if ov.scale else np.broadcast_to(vals, target.shape)
    else:
        if ov.periods is not None:
            raise ScenarioError(f"{name} has no period axis")
        if index:
            arr[index] = arr[index] * float(ov.value) if ov.scale else float(ov.value)
        else:
            arr = arr * float(ov.value) if ov.scale else np.full_like(arr, float(ov.value))
    return cal.replace(**{name: arr})


def apply_overrides(cal: MarketCalibration, overrides) -> MarketCalibration:
    for ov in overrides:
        cal = apply_override(cal, ov)
    return cal


def scenario_overrides(which: str) -> tuple[Override, ...]:
    if which == "baseline":
        return ()
    if which == "tech_breakthrough":
        return (
            Override("theta", 0.00012),
            Override("s1.green", 0.15),
            Override("alpha", {"range": [0.4, 0.8]}),
        )
    if which == "policy_change":
        return (
            Override("b.green", {"range": [0.004, 0.012]}),
            Override("b.blue", {"range": [0.004, 0.012]}),
            Override("s2.green", 0.03),
            Override("r0", 0.15),
        )
    if which == "downturn":
        return (
            Override("q", 2.625),
            Override("demand_index", {"range": [2000, 3900]}),
            Override("vartheta", 0.07),
        )
    raise ScenarioError(f"unknown scenario {which!r}; choose from {', '.join(SCENARIOS)}")


def apply_scenario(base: MarketCalibration, which: str) -> MarketCalibration:
    """Calibration under one of the exogenous shocks.

    A new ``demand_index`` rescales each period's potential demand by its
    ratio to the base index, so the index acts as a market-size factor.
    """
    cal = apply_overrides(base, scenario_overrides(which))
    if not np.array_equal(cal.demand_index, base.demand_index):
        ratio = cal.demand_index / base.demand_index
        cal = cal.replace(d0=base.d0 * ratio[None, :])
    return cal


# -- rollout -------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    base: MarketCalibration
    overrides: tuple[Override, ...] = ()
    regimes: tuple[Regime, ...] = ALL_REGIMES
    powers: BargainingPowers = BargainingPowers()
    settings: SolverSettings = DEFAULT_SETTINGS

    def __post_init__(self):
        object.__setattr__(self, "regimes", tuple(Regime.parse(r) for r in self.regimes))
        object.__setattr__(self, "overrides", tuple(self.overrides))
        for ov in self.overrides:
            _resolve(self.base, ov.path)

    @classmethod
    def named(cls, which: str, base: MarketCalibration, **kwargs) -> "ScenarioSpec":
        if which not in SCENARIOS:
            raise ScenarioError(f"unknown scenario {which!r}; choose from {', '.join(SCENARIOS)}")
        return cls(name=which, base=base, **kwargs)

    def calibration(self) -> MarketCalibration:
        cal = apply_scenario(self.base, self.name) if self.name in SCENARIOS else self.base
        cal = apply_overrides(cal, self.overrides)
        issues = cal.validate()
        if issues:
            raise ScenarioError("; ".join(issues))
        return cal


@dataclass(frozen=True)
class RegimePath:
    regime: Regime
    outcomes: tuple[RegimeOutcome, ...]
    penetration: tuple[float, ...]  # state at each solved period
    terminal: float | None  # state after the last solved period
    clamped: tuple[bool, ...]
    error: str | None = None
    error_kind: str | None = None  # "convergence", "domain" or "contract"

    @property
    def infeasible(self) -> list[tuple[int, str]]:
        """(period, type) pairs whose coordination contract has an empty lump-sum range."""
        out = []
        for o in self.outcomes:
            if o.contract is None:
                continue
            out += [(o.state.t, term.type.label) for term in o.contract.terms if term is not None and not term.feasible]
        return out

    @property
    def years(self) -> int:
        return len(self.outcomes)

    @property
    def green_share(self) -> list[float]:
        return [o.w for o in self.outcomes]

    @property
    def market_shares(self) -> np.ndarray:
        return np.array([o.market_shares for o in self.outcomes]).reshape(-1, 3)

    @property
    def profits(self) -> list[MemberProfits]:
        return [o.member_profits for o in self.outcomes]

    @property
    def cumulative_profits(self) -> list[MemberProfits]:
        out, acc = [], MemberProfits()
        for p in self.profits:
            acc = acc + p
            out.append(acc)
        return out


@dataclass(frozen=True)
class ScenarioRun:
    spec: ScenarioSpec
    calibration: MarketCalibration
    paths: dict = field(default_factory=dict)  # Regime -> RegimePath

    def path(self, regime) -> RegimePath:
        return self.paths[Regime.parse(regime)]

    @property
    def failed(self) -> dict:
        return {r.value: p.error for r, p in self.paths.items() if p.error}


def _solve_period(cal, state, regime, spec, cache):
    def get(reg):
        key = (reg, state.t, state.r)
        if key not in cache:
            cache[key] = regime_outcome(cal, state, reg, spec.settings)
        return cache[key]

    if regime is Regime.CO:
        return coordinated_outcome(cal, state, spec.powers, spec.settings, ct=get(Regime.CT), cn=get(Regime.CN))
    return get(regime)


def roll_regime(cal: MarketCalibration, regime, spec: ScenarioSpec, cache=None) -> RegimePath:
    """Roll one regime across the horizon on its own penetration path."""
    regime = Regime.parse(regime)
    cache = {} if cache is None else cache
    state = MarketState(0, cal.r0)
    outcomes, path, clamped = [], [], []
    for t in range(cal.horizon):
        try:
            out = _solve_period(cal, state, regime, spec, cache)
            path.append(state.r)
            outcomes.append(out)
            step = penetration_step(cal, state, out.w, out.average_prices)
        except (ConvergenceError, DomainError, ContractConsistencyError) as exc:
            kind = "convergence" if isinstance(exc, ConvergenceError) else "domain" if isinstance(exc, DomainError) else "contract"
            return RegimePath(regime, tuple(outcomes), tuple(path), None, tuple(clamped), f"t={t}: {exc}", kind)
        clamped.append(step.clamped)
        state = step.state
    return RegimePath(regime, tuple(outcomes), tuple(path), state.r, tuple(clamped))


def rollout(spec: ScenarioSpec) -> ScenarioRun:
    """Solve every requested regime period by period with penetration dynamics.

    Regimes are not coupled: each follows its own penetration state.  The
    coordination regime reuses collusion decisions, so when both are requested
    they share solved periods.
    """
    cal = spec.calibration()
    cache = {}
    paths = {r: roll_regime(cal, r, spec, cache) for r in spec.regimes}
    return ScenarioRun(spec, cal, paths)


# -- sweeps --------------------------------------------------------------------------


@dataclass(frozen=True)
class CommissionPoint:
    delta: float
    profits: MemberProfits
    prices: tuple[float | None, ...]
    shares: tuple[float, ...]
    feasible: bool
    commission: float = 0.0


@dataclass(frozen=True)
class CommissionSweep:
    """Final-period outcomes over a commission grid.

    ``commission`` on each point is the hub's fee income alone; ``profits.hub``
    also carries the hub's transfers under the coordination contract.
    """

    t: int
    r: float
    points: tuple[CommissionPoint, ...]

    def hub_series(self, income_only: bool = True) -> list[float]:
        return [p.commission if income_only else p.profits.hub for p in self.points]

    def best_delta(self, income_only: bool = True) -> float:
        hub = self.hub_series(income_only)
        return self.points[int(np.argmax(hub))].delta

    def interior_peak(self, income_only: bool = True) -> bool:
        hub = self.hub_series(income_only)
        k = int(np.argmax(hub))
        return 0 < k < len(hub) - 1


def parse_grid(text: str) -> list[float]:
    """``start:stop:step`` with ``stop`` included when it falls on the grid."""
    try:
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise ScenarioError(f"grid must be start:stop:step (got {text!r})") from exc
    if step <= 0 or stop < start:
        raise ScenarioError(f"invalid grid {text!r}")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 12) for k in range(n)]


def _sales(cal, t, outcome):
    for sol in outcome.solutions:
        if sol is None:
            continue
        for j in PRODUCERS:
            if sol.price[j] is not None:
                yield sol.price[j], sol.quantity[j], cal.c[sol.type, j, t]


def commission_sweep(spec: ScenarioSpec, delta_grid, run: ScenarioRun | None = None) -> CommissionSweep:
    """Re-solve the coordination regime's final period for each commission rate.

    The penetration state is the one the coordination path reaches in its final
    period under the spec's own commission path.
    """
    grid = [float(d) for d in delta_grid]
    if any(not 0 <= d < 1 for d in grid):
        raise ScenarioError("commission rates must lie in [0, 1)")
    cal = spec.calibration()
    if run is None or Regime.CO not in run.paths:
        path = roll_regime(cal, Regime.CO, spec)
    else:
        path = run.paths[Regime.CO]
    if path.error:
        raise ConvergenceError(f"coordination path failed: {path.error}")
    t = cal.horizon - 1
    state = MarketState(t, path.penetration[-1])
    points = []
    for d in grid:
        delta = np.array(cal.delta, copy=True)
        delta[t] = d
        swept = cal.replace(delta=delta)
        out = coordinated_outcome(swept, state, spec.powers, spec.settings)
        income = profit_hub(swept, t, _sales(swept, t, out))
        points.append(
            CommissionPoint(
                d, out.member_profits, tuple(out.average_prices), tuple(out.market_shares), out.contract.feasible, income
            )
        )
    return CommissionSweep(t, state.r, tuple(points))


@dataclass(frozen=True)
class BargainingRow:
    case: int
    powers: BargainingPowers
    t: int
    type: str
    omega: float
    omega_prime: float
    profits: MemberProfits
    cournot: MemberProfits
    feasible: bool

    @property
    def participation(self) -> bool:
        tol = lambda v: 1e-9 * max(1.0, abs(v))
        return all(
            co >= ct - tol(ct)
            for co, ct in zip(
                (self.profits.shp, self.profits.chpe, self.profits.hub),
                (self.cournot.shp, self.cournot.chpe, self.cournot.hub),
            )
        )


def default_bargaining_cases(n: int = 10) -> list[BargainingPowers]:
    """Hub power stepped from 0.1 to 0.325, producers splitting the remainder."""
    return [BargainingPowers.hub_share(z) for z in np.linspace(0.1, 0.325, n)]


def bargaining_sweep(spec: ScenarioSpec, cases=None, periods=None) -> list[BargainingRow]:
    """Contract terms and member profits for each bargaining case along the coordination path."""
    cases = list(cases) if cases is not None else default_bargaining_cases()
    cal = spec.calibration()
    path = roll_regime(cal, Regime.CO, spec)
    if path.error:
        raise ConvergenceError(f"coordination path failed: {path.error}")
    periods = range(len(path.outcomes)) if periods is None else periods
    rows = []
    for t in periods:
        state = MarketState(t, path.penetration[t])
        ct = regime_outcome(cal, state, Regime.CT, spec.settings)
        cn = regime_outcome(cal, state, Regime.CN, spec.settings)
        for n, powers in enumerate(cases):
            co = coordinated_outcome(cal, state, powers, spec.settings, ct=ct, cn=cn)
            for i in TYPES:
                term = co.contract.terms[i]
                if term is None:
                    continue
                rows.append(
                    BargainingRow(
                        n, powers, t, i.label, term.omega, term.omega_prime, co.profits[i], ct.profits[i], term.feasible
                    )
                )
    return rows


@dataclass(frozen=True)
class SensitivityRow:
    delta: float
    regime: str
    metric: str
    base: float
    value: float

    @property
    def change(self) -> float:
        return self.value - self.base

    @property
    def relative(self) -> float:
        return self.change / abs(self.base) if self.base != 0 else math.nan


def _summary(run: ScenarioRun) -> dict:
    out = {}
    for regime, path in run.paths.items():
        if path.error:
            continue
        total = MemberProfits()
        for p in path.profits:
            total = total + p
        shares = path.market_shares[-1]
        demand = float(sum(o.quantities.sum() for o in path.outcomes))
        for name, val in (("profit_SHP", total.shp), ("profit_CHPE", total.chpe), ("profit_HUB", total.hub)):
            out[(regime.value, name)] = float(val)
        for i in TYPES:
            out[(regime.value, f"share_{i.label}")] = float(shares[i])
        out[(regime.value, "penetration")] = float(path.penetration[-1])
        out[(regime.value, "quantity")] = demand
    return out


def sensitivity(spec: ScenarioSpec, path: str, deltas) -> list[SensitivityRow]:
    """One-at-a-time relative perturbation of a parameter (every period, every index below ``path``).

    Profits and quantities are summed over the horizon; shares and penetration
    are final-period values.
    """
    base = _summary(rollout(spec))
    rows = []
    for d in deltas:
        d = float(d)
        if not math.isfinite(d):
            raise ScenarioError("relative deltas must be finite")
        pert = ScenarioSpec(
            spec.name,
            spec.base,
            spec.overrides + (Override(path, 1.0 + d, scale=True),),
            spec.regimes,
            spec.powers,
            spec.settings,
        )
        values = base if d == 0 else _summary(rollout(pert))
        for key in sorted(base):
            if key in values:
                rows.append(SensitivityRow(d, key[0], key[1], base[key], values[key]))
    return rows
