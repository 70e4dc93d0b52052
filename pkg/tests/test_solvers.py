import math

import numpy as np
import pytest
from scipy import optimize
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import simple_calibration
from h2hub.model import (
    DomainError,
    HydrogenType,
    MarketState,
    Producer,
    TYPES,
    profit_chpe,
    profit_shp,
)
from h2hub.solvers import (
    DEFAULT_SETTINGS,
    Regime,
    SolverSettings,
    backsolve_constants,
    chpe_period_profit,
    chpe_switch_price,
    closed_form_quantities,
    collusion_optimum,
    cournot_equilibrium,
    foc_value,
    grid_oracle,
    optimal_lead_reduction,
    regime_outcome,
    solve_channel,
    solve_type,
    type_profits,
)

G, B, Y = HydrogenType.GREEN, HydrogenType.BLUE, HydrogenType.GREY
S, C = Producer.SHP, Producer.CHPE
STATE = MarketState(0, 0.1)

# SHP with room to choose an interior quantity
ROOMY = np.array([[4000.0, 40.0], [0.0, 200.0], [0.0, 300.0]])


def shp_demand(x, r=0.1):
    """Green SHP channel demand of the simple market, written out by hand."""
    a = 0.2 / 2.25**0.05
    return 1000 * (0.05 * r + math.exp(-a * x**1.05 - 0.05 * 2.0 / 2.0))


def bisect(fn, lo, hi, n=200):
    for _ in range(n):
        mid = 0.5 * (lo + hi)
        if (fn(lo) > 0) == (fn(mid) > 0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_settings_validation_and_regime_parse():
    with pytest.raises(ValueError):
        SolverSettings(tolerance=0)
    with pytest.raises(ValueError):
        SolverSettings(mode="exact")
    assert Regime.parse("ct") is Regime.CT and Regime.parse(Regime.CO) is Regime.CO
    with pytest.raises(ValueError):
        Regime.parse("cx")


# -- own-channel optimum ------------------------------------------------------------


def test_shutdown_when_cost_exceeds_choke():
    cal = simple_calibration(beta_pen=0.0, c=np.array([[3.0, 3.3], [2.4, 2.16], [1.54, 1.54]]) * 100)
    for j in (S, C):
        sol = solve_channel(cal, STATE, G, j, 1.0)
        assert sol.quantity == 0.0 and sol.binding == "shutdown"


def test_inactive_producer():
    sol = solve_channel(simple_calibration(), STATE, B, S, 0.0)
    assert sol.binding == "inactive" and sol.price is None


def test_shp_interior_matches_independent_bisection():
    cal = simple_calibration(k=ROOMY)
    sol = solve_channel(cal, STATE, G, S, 0.0)
    assert sol.binding is None and sol.residual < 1e-10
    p = bisect(lambda x: 0.95 * (x - 3.0) - 2 * 0.0002 * shp_demand(x), 3.0, 60.0)
    assert sol.price == pytest.approx(p, rel=1e-9)
    assert sol.quantity == pytest.approx(shp_demand(p), rel=1e-9)


def test_collusion_with_commission_near_one_starves_shp():
    base = solve_channel(simple_calibration(k=ROOMY), STATE, G, S, 0.0).quantity
    near = [solve_channel(simple_calibration(k=ROOMY, delta=1 - e), STATE, G, S, 0.0).quantity for e in (1e-4, 1e-6)]
    assert near[0] < 0.05 * base and near[1] < 1e-3 * base
    assert near[1] < near[0]


def test_linear_chpe_payoff_prices_at_cost():
    # without investment cost CHPE's condition reduces to price equal to unit cost
    cal = simple_calibration(rho=0.0, k=np.array([[60.0, 4000.0], [0.0, 200.0], [0.0, 300.0]]))
    sol = solve_channel(cal, STATE, G, C, 1.0)
    assert sol.price == pytest.approx(3.3, rel=1e-10)
    a = 0.2 / 2.25**0.05
    expect = 1000 * (0.05 * 0.1 + math.exp(-a * 3.3**1.05 - 0.05 * 4.0 / 2.0))
    assert sol.quantity == pytest.approx(expect, rel=1e-9)


def test_full_mode_without_investment_cost_matches_golden_section_on_price():
    k = np.array([[60.0, 4000.0], [0.0, 200.0], [0.0, 300.0]])
    cal = simple_calibration(rho=0.0, k=k)
    sol = solve_channel(cal, STATE, G, C, 1.0, SolverSettings(mode="full"))
    a = 0.2 / 2.25**0.05

    def margin(x):
        return -0.95 * (x - 3.3) * 1000 * (0.05 * 0.1 + math.exp(-a * x**1.05 - 0.05 * 4.0 / 2.0))

    res = optimize.minimize_scalar(margin, bracket=(3.3, 6.0, 40.0), method="golden", tol=1e-12)
    assert sol.binding is None
    assert sol.price == pytest.approx(res.x, rel=1e-7)


def test_chpe_switch_price_is_indifference_point():
    cal = simple_calibration()
    p = chpe_switch_price(cal, 0, G, 1.5)
    assert profit_chpe(cal, 0, G, p, 40.0, 1.5) == pytest.approx(profit_chpe(cal, 0, G, p, 0.0, 1.5), rel=1e-12)
    assert chpe_switch_price(cal, 0, G, 0.0) == 3.3


@settings(max_examples=60, deadline=None)
@given(c1=st.floats(2.0, 6.0), dc=st.floats(0.01, 2.0))
def test_shp_quantity_falls_with_own_cost(c1, dc):
    def q(cost):
        c = np.array([[cost, 3.3], [2.4, 2.16], [1.54, 1.54]])
        return solve_channel(simple_calibration(k=ROOMY, c=c), STATE, G, S, 0.0).quantity

    assert q(c1 + dc) <= q(c1) * (1 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(p=st.floats(0.5, 20.0), Q=st.floats(0.0, 200.0), y=st.floats(0.0, 5.0))
def test_foc_is_own_quantity_derivative_at_fixed_price(p, Q, y):
    cal = simple_calibration()
    h = 1e-5
    for j, fn in ((S, lambda q: profit_shp(cal, 0, G, p, q)), (C, lambda q: profit_chpe(cal, 0, G, p, q, y))):
        numeric = (fn(Q + h) - fn(Q - h) if Q >= h else fn(Q + h) - fn(Q)) / (2 * h if Q >= h else h)
        val, scale = foc_value(cal, 0, G, j, p, Q, y)
        assert val == pytest.approx(numeric, abs=1e-4 * max(scale, 1.0))


# -- Cournot -------------------------------------------------------------------------


def test_cournot_requires_a_seller():
    cal = simple_calibration(k=np.array([[0.0, 0.0], [0.0, 200.0], [0.0, 300.0]]))
    with pytest.raises(DomainError):
        cournot_equilibrium(cal, STATE, G, 1.0)


def test_cournot_quantities_clear_the_market():
    cal = simple_calibration(k=ROOMY)
    sol = cournot_equilibrium(cal, STATE, G, 1.0)
    p = sol.price[S]
    assert sol.price[C] == p
    # the market clears on the longest effective lead time, CHPE's 5 - 1
    a = 0.2 / 2.25**0.05
    demand = 1000 * (0.05 * 0.1 + math.exp(-a * p**1.05 - 0.05 * 4.0 / 2.0))
    assert sol.total == pytest.approx(demand, rel=1e-9)
    assert sol.quantity[S] == pytest.approx(0.95 * (p - 3.0) / (2 * 0.0002), rel=1e-9)


@pytest.mark.parametrize("regime", ["ct", "cn"])
def test_grid_oracle_certifies_solutions(base_cal, regime):
    state = MarketState(0, base_cal.r0)
    for i in TYPES:
        sol = solve_type(base_cal, state, i, regime, 2.0)
        report = grid_oracle(base_cal, state, i, 2.0, regime, sol)
        assert all(report.nash()), (i.label, report)
        assert all(report.within_one_cell(sol.quantity)), (i.label, report)


def test_cournot_full_mode_clears(base_cal):
    full = SolverSettings(mode="full")
    state = MarketState(0, base_cal.r0)
    for i in TYPES:
        sol = cournot_equilibrium(base_cal, state, i, 2.0, full)
        assert max(sol.foc_residual) < 1e-6
        assert all(grid_oracle(base_cal, state, i, 2.0, "ct", sol, full).nash())


# -- lead-time reduction ---------------------------------------------------------------


@pytest.mark.parametrize("regime", ["ct", "cn"])
def test_lead_choice_matches_fine_scan(regime):
    cal = simple_calibration()
    choice = optimal_lead_reduction(cal, STATE, regime)
    grid = np.arange(0.0, 5.0 + 5e-4, 1e-3)
    vals = [chpe_period_profit(cal, STATE, regime, y) for y in grid]
    best = int(np.argmax(vals))
    assert choice.profit >= vals[best] - 1e-9 * abs(vals[best])
    assert abs(choice.y - grid[best]) <= 1e-3


def test_lead_choice_limits():
    assert optimal_lead_reduction(simple_calibration(gamma=1e7), STATE, "cn").y == pytest.approx(3.0, abs=1e-3)
    choice = optimal_lead_reduction(simple_calibration(rho=1e6), STATE, "cn")
    assert choice.y == 0.0 and choice.at_bound


def test_co_lead_search_uses_joint_channel():
    cal = simple_calibration()
    assert optimal_lead_reduction(cal, STATE, "co") == optimal_lead_reduction(cal, STATE, "cn")


# -- regime outcomes ------------------------------------------------------------------


def test_collusion_beats_competition_in_first_period(base_cal):
    state = MarketState(0, base_cal.r0)
    ct = regime_outcome(base_cal, state, "ct")
    cn = regime_outcome(base_cal, state, "cn")
    assert cn.member_profits.total >= ct.member_profits.total
    assert math.isclose(cn.market_shares.sum(), 1.0)


def test_zero_commission_leaves_hub_empty():
    cal = simple_calibration(delta=0.0)
    out = regime_outcome(cal, STATE, "cn")
    assert out.member_profits.hub == 0.0


def test_type_profits_match_profit_functions():
    cal = simple_calibration(k=ROOMY)
    sol = collusion_optimum(cal, STATE, G, 1.0)
    got = type_profits(cal, 0, sol)
    assert got.shp == profit_shp(cal, 0, G, sol.price[S], sol.quantity[S])
    assert got.chpe == profit_chpe(cal, 0, G, sol.price[C], sol.quantity[C], 1.0)


def test_regime_outcome_rejects_co():
    with pytest.raises(ValueError):
        regime_outcome(simple_calibration(), STATE, "co")


# -- printed closed forms ---------------------------------------------------------------


def test_backsolved_constants_reproduce_collusion_quantities():
    cal = simple_calibration(k=ROOMY)
    y = 1.0
    sol = collusion_optimum(cal, STATE, G, y)
    const = backsolve_constants(cal, STATE, G, y, *sol.quantity)
    q_s, q_c = closed_form_quantities(cal, STATE, G, Regime.CN, y, const)
    assert q_s == pytest.approx(sol.quantity[S], rel=1e-9)
    assert q_c == pytest.approx(sol.quantity[C], rel=1e-9)
    assert DEFAULT_SETTINGS.mode == "paper"
