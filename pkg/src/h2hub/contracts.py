"""Coordination contracts between the hub and the two producers.

Under coordination the producers keep their collusion decisions while the hub
shares part of their costs (coefficients ``phi`` for SHP's production cost and
``phi_prime`` for CHPE's lead-time investment) and settles lump sums ``omega``
and ``omega_prime``.  All transfers cancel in the three-member total, so the
coordinated total equals the collusion total and the surplus over Cournot is
split by bargaining power.

Surplus pools are kept per hydrogen type.  A producer without capacity for a
type takes no part in that type's contract: its lump sum is zero and its
bargaining weight is left out of that pool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .model import (
    PRODUCERS,
    TYPES,
    DomainError,
    HydrogenType,
    MarketCalibration,
    MarketState,
    MemberProfits,
    Producer,
    as_type,
    delivery_penalty,
)
from .solvers import (
    DEFAULT_SETTINGS,
    Regime,
    RegimeOutcome,
    SolverSettings,
    TypeSolution,
    regime_outcome,
)


class ContractConsistencyError(RuntimeError):
    """Lump sums computed from the surplus split fall outside their own feasible range."""


@dataclass(frozen=True)
class BargainingPowers:
    z_shp: float = 1.0
    z_chpe: float = 1.0
    z_hub: float = 1.0

    def __post_init__(self):
        vals = (self.z_shp, self.z_chpe, self.z_hub)
        if any(not math.isfinite(z) or z < 0 for z in vals):
            raise DomainError(f"bargaining powers must be finite and >= 0 (got {vals})")
        if sum(vals) <= 0:
            raise DomainError("at least one bargaining power must be positive")

    @classmethod
    def hub_share(cls, z_hub: float) -> "BargainingPowers":
        """Hub weight ``z_hub`` with the remainder split evenly between the producers."""
        return cls((1 - z_hub) / 2, (1 - z_hub) / 2, z_hub)

    def shares(self, active=(True, True)) -> tuple[float, float, float]:
        """Normalised weights (SHP, CHPE, hub) among participating members."""
        z = (self.z_shp if active[0] else 0.0, self.z_chpe if active[1] else 0.0, self.z_hub)
        total = sum(z)
        if total <= 0:
            raise DomainError("no participating member has positive bargaining power")
        return tuple(v / total for v in z)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def _slack(self, rtol: float = 1e-9) -> float:
        return rtol * max(1.0, abs(self.lo), abs(self.hi))

    @property
    def empty(self) -> bool:
        # a zero-width range may come out inverted by rounding
        return self.lo > self.hi + self._slack()

    def contains(self, value: float, rtol: float = 1e-9) -> bool:
        slack = self._slack(rtol)
        return self.lo - slack <= value <= self.hi + slack


@dataclass(frozen=True)
class TypeContract:
    type: HydrogenType
    phi: float | None
    phi_prime: float | None
    omega: float
    omega_prime: float
    surplus: float
    shares: tuple[float, float, float]  # SHP, CHPE, hub portions of the surplus
    omega_bounds: Interval
    omega_prime_bounds: Interval

    @property
    def feasible(self) -> bool:
        return not (self.omega_bounds.empty or self.omega_prime_bounds.empty)


@dataclass(frozen=True)
class CoordinationContract:
    """Contract terms of one period, indexed by hydrogen type (``None`` when unsold)."""

    t: int
    powers: BargainingPowers
    terms: tuple[TypeContract | None, ...]

    @property
    def feasible(self) -> bool:
        return all(c.feasible for c in self.terms if c is not None)

    def _get(self, name):
        return [None if c is None else getattr(c, name) for c in self.terms]

    @property
    def phi(self):
        return self._get("phi")

    @property
    def phi_prime(self):
        return self._get("phi_prime")

    @property
    def omega(self):
        return self._get("omega")

    @property
    def omega_prime(self):
        return self._get("omega_prime")


# -- coefficients -------------------------------------------------------------------


def phi_shp(cal: MarketCalibration, t: int, i, x_co: float, q_co: float) -> float:
    """Share of SHP's production cost carried by the hub."""
    if q_co == 0:
        raise DomainError("phi is undefined for zero SHP quantity")
    i = as_type(i)
    c = cal.c[i, Producer.SHP, t]
    d = cal.delta[t]
    return float((c - (1 - d) * x_co + d * c) / (2 * cal.theta * q_co))


def phi_chpe(cal: MarketCalibration, t: int, i, x_co: float, q_co: float, y_cn: float) -> float | None:
    """Share of CHPE's lead-time investment carried by the hub; ``None`` when nothing is invested."""
    if y_cn == 0:
        return None
    i = as_type(i)
    c = cal.c[i, Producer.CHPE, t]
    return float(1 - (1 - cal.delta[t]) * (x_co - c) * math.log(q_co + 1) / (cal.rho * y_cn))


def contract_coefficients(cal, t, sol: TypeSolution) -> tuple[float | None, float | None]:
    phi = phi_p = None
    if sol.binding[Producer.SHP] != "inactive" and sol.quantity[Producer.SHP] > 0:
        phi = phi_shp(cal, t, sol.type, sol.price[Producer.SHP], sol.quantity[Producer.SHP])
    if sol.binding[Producer.CHPE] != "inactive":
        phi_p = phi_chpe(cal, t, sol.type, sol.price[Producer.CHPE], sol.quantity[Producer.CHPE], sol.y)
    return phi, phi_p


# -- coordinated profits ------------------------------------------------------------


def _base_terms(cal, t, sol: TypeSolution, phi, phi_prime):
    """Member profits before lump sums (SHP, CHPE, hub)."""
    i = sol.type
    d = cal.delta[t]
    phi = phi or 0.0
    phi_prime = phi_prime or 0.0
    shp = chpe = hub = 0.0
    if sol.binding[Producer.SHP] != "inactive":
        x, q = sol.price[Producer.SHP], sol.quantity[Producer.SHP]
        margin = (x - cal.c[i, Producer.SHP, t]) * q
        cost = cal.theta * q**2
        shp = (1 - d) * margin - (1 - phi) * cost
        hub += d * margin - phi * cost
    if sol.binding[Producer.CHPE] != "inactive":
        x, q = sol.price[Producer.CHPE], sol.quantity[Producer.CHPE]
        margin = (x - cal.c[i, Producer.CHPE, t]) * q if q > 0 else 0.0
        invest = cal.rho * sol.y * math.log(q + 1)
        chpe = (1 - d) * margin - delivery_penalty(cal, sol.y) - (1 - phi_prime) * invest
        hub += d * margin - phi_prime * invest
    return shp, chpe, hub


def coordinated_profits(
    cal: MarketCalibration,
    t: int,
    cn_solution: TypeSolution,
    phi: float | None,
    phi_prime: float | None,
    omega: float = 0.0,
    omega_prime: float = 0.0,
) -> MemberProfits:
    """Member profits of one type under a contract, at the collusion decisions."""
    shp, chpe, hub = _base_terms(cal, t, cn_solution, phi, phi_prime)
    return MemberProfits(shp - omega, chpe - omega_prime, hub + omega + omega_prime)


# -- feasibility and surplus ----------------------------------------------------------


def _active(sol: TypeSolution) -> tuple[bool, bool]:
    return tuple(sol.binding[j] != "inactive" for j in PRODUCERS)


def lump_sum_bounds(
    cal: MarketCalibration,
    t: int,
    ct_profits: MemberProfits,
    cn_solution: TypeSolution,
    phi: float | None,
    phi_prime: float | None,
) -> tuple[Interval, Interval]:
    """Ranges of ``omega`` and ``omega_prime`` leaving every member at least its Cournot profit.

    Each coordinated profit is affine in the lump sums: SHP needs
    ``omega <= A_S - pi_S``, CHPE needs ``omega_prime <= A_C - pi_C`` and the hub
    needs ``omega + omega_prime >= pi_H - A_H``.  The returned intervals are the
    projections of that triangle; they are non-empty exactly when the
    coordination surplus is non-negative.
    """
    a_s, a_c, a_h = _base_terms(cal, t, cn_solution, phi, phi_prime)
    act_s, act_c = _active(cn_solution)
    w_max = a_s - ct_profits.shp if act_s else 0.0
    wp_max = a_c - ct_profits.chpe if act_c else 0.0
    need = ct_profits.hub - a_h
    # a producer outside the contract has its lump sum pinned at zero
    omega = Interval(need - wp_max, w_max) if act_s else Interval(max(need - wp_max, 0.0), 0.0)
    omega_p = Interval(need - w_max, wp_max) if act_c else Interval(max(need - w_max, 0.0), 0.0)
    return omega, omega_p


def allocate_surplus(ct, cn, powers: BargainingPowers, active=(True, True)) -> tuple[float, float, float, float]:
    """Coordination surplus (collusion minus Cournot total) and each member's portion.

    ``ct`` and ``cn`` may be ``MemberProfits`` or regime outcomes.
    """
    ct = ct.member_profits if isinstance(ct, RegimeOutcome) else ct
    cn = cn.member_profits if isinstance(cn, RegimeOutcome) else cn
    surplus = cn.total - ct.total
    z_s, z_c, z_h = powers.shares(active)
    share_s = surplus * z_s
    share_c = surplus * z_c
    # the hub takes the remainder so the portions add up to the surplus exactly
    return surplus, share_s, share_c, surplus - share_s - share_c


def lump_sums(
    cal: MarketCalibration,
    t: int,
    ct_solution: TypeSolution,
    cn_solution: TypeSolution,
    phi: float | None,
    phi_prime: float | None,
    share_shp: float,
    share_chpe: float,
) -> tuple[float, float]:
    """Lump sums that leave each producer at its Cournot profit plus its surplus portion."""
    i = cn_solution.type
    d = cal.delta[t]
    omega = omega_p = 0.0
    act_s, act_c = _active(cn_solution)
    if act_s:
        c = cal.c[i, Producer.SHP, t]
        q_cn, q_ct = cn_solution.quantity[Producer.SHP], ct_solution.quantity[Producer.SHP]
        x_cn, x_ct = cn_solution.price[Producer.SHP], ct_solution.price[Producer.SHP]
        omega = (
            (1 - d) * ((x_cn - c) * q_cn - (x_ct - c) * q_ct)
            + cal.theta * (q_ct**2 - (1 - (phi or 0.0)) * q_cn**2)
            - share_shp
        )
    if act_c:
        c = cal.c[i, Producer.CHPE, t]
        q_cn, q_ct = cn_solution.quantity[Producer.CHPE], ct_solution.quantity[Producer.CHPE]
        x_cn, x_ct = cn_solution.price[Producer.CHPE], ct_solution.price[Producer.CHPE]
        m_cn = (x_cn - c) * q_cn if q_cn > 0 else 0.0
        m_ct = (x_ct - c) * q_ct if q_ct > 0 else 0.0
        omega_p = (
            (1 - d) * (m_cn - m_ct)
            + (delivery_penalty(cal, ct_solution.y) - delivery_penalty(cal, cn_solution.y))
            + cal.rho
            * (ct_solution.y * math.log(q_ct + 1) - (1 - (phi_prime or 0.0)) * cn_solution.y * math.log(q_cn + 1))
            - share_chpe
        )
    return float(omega), float(omega_p)


def design_contract(
    cal: MarketCalibration,
    t: int,
    ct_solution: TypeSolution,
    cn_solution: TypeSolution,
    ct_profits: MemberProfits,
    cn_profits: MemberProfits,
    powers: BargainingPowers,
) -> TypeContract:
    """Full contract for one type: coefficients, surplus split, lump sums and their ranges."""
    phi, phi_p = contract_coefficients(cal, t, cn_solution)
    active = _active(cn_solution)
    surplus, s_s, s_c, s_h = allocate_surplus(ct_profits, cn_profits, powers, active)
    omega, omega_p = lump_sums(cal, t, ct_solution, cn_solution, phi, phi_p, s_s, s_c)
    b_w, b_wp = lump_sum_bounds(cal, t, ct_profits, cn_solution, phi, phi_p)
    if not (b_w.empty or b_wp.empty) and not (b_w.contains(omega) and b_wp.contains(omega_p)):
        raise ContractConsistencyError(
            f"{cn_solution.type.label} t={t}: lump sums ({omega:.6g}, {omega_p:.6g}) outside "
            f"[{b_w.lo:.6g}, {b_w.hi:.6g}] x [{b_wp.lo:.6g}, {b_wp.hi:.6g}]"
        )
    return TypeContract(cn_solution.type, phi, phi_p, omega, omega_p, surplus, (s_s, s_c, s_h), b_w, b_wp)


def coordinated_outcome(
    cal: MarketCalibration,
    state: MarketState,
    powers: BargainingPowers = BargainingPowers(),
    settings: SolverSettings = DEFAULT_SETTINGS,
    ct: RegimeOutcome | None = None,
    cn: RegimeOutcome | None = None,
) -> RegimeOutcome:
    """Coordination regime: collusion decisions with contract transfers.

    The Cournot benchmark is solved at the same state.  Pass ``ct``/``cn`` to
    reuse outcomes already computed at ``state``.
    """
    ct = ct or regime_outcome(cal, state, Regime.CT, settings)
    cn = cn or regime_outcome(cal, state, Regime.CN, settings)
    terms, profits, solutions = [], [], []
    errors = dict(cn.errors)
    for i in TYPES:
        sol_cn, sol_ct = cn.solutions[i], ct.solutions[i]
        if sol_cn is None or sol_ct is None:
            terms.append(None)
            profits.append(MemberProfits())
            solutions.append(None)
            if sol_cn is not None or sol_ct is not None:
                errors.setdefault(i.label, "benchmark outcome missing")
            continue
        contract = design_contract(cal, state.t, sol_ct, sol_cn, ct.profits[i], cn.profits[i], powers)
        terms.append(contract)
        profits.append(
            coordinated_profits(
                cal, state.t, sol_cn, contract.phi, contract.phi_prime, contract.omega, contract.omega_prime
            )
        )
        solutions.append(replace(sol_cn, regime=Regime.CO))
    return RegimeOutcome(
        Regime.CO,
        state,
        cn.y,
        cn.y_at_bound,
        tuple(solutions),
        tuple(profits),
        errors,
        CoordinationContract(state.t, powers, tuple(terms)),
    )
