from dataclasses import replace

import numpy as np
import pytest

from conftest import TOY_HORIZON, toy_scenario
from etsgame.nash import (HISTORY_COLUMNS, NashConfig, NotConverged, RegionalInfeasibility, adapt_steps,
                          convergence_report, reported_price, solve_nash, update_emissions, update_price)
from etsgame.region import RegionProblem, solve_region
from etsgame.scenario import Scenario

H = TOY_HORIZON


# --- update rules -------------------------------------------------------------

def test_update_price_examples():
    assert update_price(10.0, 0.0, 0.1) == 10.0
    assert update_price(10.0, 0.5, 0.1) == pytest.approx(10 * np.exp(0.05), rel=1e-15)
    assert update_price(10.0, 0.5, 0.1) == pytest.approx(10.5127, abs=1e-4)
    assert update_price(0.0, 3.0, 0.1, price_floor=1e-6) == 1e-6
    with pytest.raises(ValueError):
        update_price(-1.0, 0.0, 0.1)


def test_floor_price_reported_as_zero():
    m = np.full(5, 1e-6)
    for _ in range(50):
        m = update_price(m, -np.ones(5), 0.1)
    assert np.all(m == 1e-6)
    assert np.all(reported_price(m, -np.ones(5)) == 0.0)
    # a positive price or excess demand is never snapped
    assert np.all(reported_price(np.full(5, 0.3), -np.ones(5)) == 0.3)
    assert np.all(reported_price(m, np.ones(5)) == 1e-6)


def test_update_emissions_examples():
    assert update_emissions(2.0, 1.0, 0.1) == pytest.approx(1.1)
    assert np.array_equal(update_emissions([3.0, 4.0], [1.0, 2.0], 1.0), [3.0, 4.0])
    assert np.array_equal(update_emissions([1.5, 2.5], [1.5, 2.5], 0.3), [1.5, 2.5])
    with pytest.raises(ValueError):
        update_emissions([1.0, 2.0], [1.0], 0.1)


def test_adapt_steps():
    steps = np.ones(4)
    net = np.array([1.0, -1.0, 1.0, -1.0])
    prev = np.array([1.0, 1.0, -1.0, -1.0])
    floor = np.array([False, False, False, True])
    out = adapt_steps(steps, net, prev, floor)
    assert np.array_equal(out, [1.25, 0.5, 0.5, 1.0])
    assert adapt_steps([1e4], [1.0], [1.0], [False])[0] == 1e4
    assert adapt_steps([1 / 64], [1.0], [-1.0], [False])[0] == 1 / 64


def test_config_validation():
    for bad in (dict(omega=0.0), dict(omega=1.5), dict(price_floor=0.0), dict(step_rule="other"),
                dict(initial_guess="cold"), dict(max_iterations=0), dict(initial_price_path=[0.0])):
        with pytest.raises(ValueError):
            NashConfig(**bad)


def test_convergence_report(toy_eq):
    with pytest.raises(ValueError):
        convergence_report([])
    text = convergence_report(toy_eq.history)
    lines = text.strip().splitlines()
    assert lines[0] == ",".join(HISTORY_COLUMNS)
    assert len(lines) == toy_eq.iterations + 1
    last = toy_eq.history[-1]
    assert last["max_dprice"] < 1e-4 and last["max_demission"] < 1e-4 and last["max_imbalance"] < 1e-4
    assert toy_eq.history[-1]["max_imbalance"] <= toy_eq.history[0]["max_imbalance"]


# --- equilibrium properties on the toy instance ---------------------------------

def test_toy_converges(toy_eq):
    assert toy_eq.converged
    assert all(s.converged for s in toy_eq.region_solutions.values())
    assert all(s.kkt_residual <= 1e-6 for s in toy_eq.region_solutions.values())


def test_complementarity_every_year(toy_eq):
    sc = toy_eq.scenario
    m = toy_eq.price_path
    E = sum(toy_eq.trajectories[k].emissions for k in sc.region_names)
    cap = sum(r.cap_path[:H] for r in sc.regions)
    pos = m > 0
    assert pos.any() and (~pos).any()
    assert np.all(np.abs(toy_eq.imbalance[pos]) < 1e-4)
    assert np.all(E[~pos] <= cap[~pos] + 1e-4)


def test_permit_trades_conserve(toy_eq):
    EP = np.array([tr.permit_purchase for tr in toy_eq.trajectories.values()])
    bought = np.maximum(EP, 0).sum(axis=0)
    sold = np.maximum(-EP, 0).sum(axis=0)
    assert np.all(np.abs(bought - sold) < 1e-4)


def test_no_profitable_deviation(toy_eq):
    sc = toy_eq.scenario
    total = sum(tr.emissions for tr in toy_eq.trajectories.values())
    for k in sc.region_names:
        others = total - toy_eq.trajectories[k].emissions
        prob = RegionProblem(sc.region(k), sc.global_params, toy_eq.price_path, others, trading=True)
        dev = solve_region(prob, tol=1e-9)
        gain = (dev.welfare - toy_eq.welfare[k]) / abs(toy_eq.welfare[k])
        assert gain < 1e-6


def test_symmetric_regions_trade_nothing():
    base = toy_scenario(regions=("US",))
    us = base.regions[0]
    sc = Scenario("twins", base.global_params, [us, replace(us, name="US2")])
    eq = solve_nash(sc, NashConfig())
    a, b = eq.trajectories["US"], eq.trajectories["US2"]
    assert np.allclose(a.mu, b.mu, rtol=1e-9, atol=1e-12)
    assert np.allclose(a.capital, b.capital, rtol=1e-9)
    assert np.all(np.abs(a.permit_purchase) < 1e-4)
    assert np.all(np.abs(b.permit_purchase) < 1e-4)


def test_slack_caps_zero_price_but_abatement():
    huge = {r: np.full(H + 1, 1e3) for r in ("US", "China")}
    sc = toy_scenario().with_caps(huge)
    eq = solve_nash(sc, NashConfig())
    assert np.all(eq.price_path == 0.0)
    for k, tr in eq.trajectories.items():
        assert np.all(np.abs(tr.permit_purchase) < 1e-4)
        assert np.all(tr.mu > 0)
    # same abatement as without a market at all, up to the damped stopping rule
    eq0 = solve_nash(sc.with_ets(False), NashConfig())
    for k in eq.trajectories:
        assert np.allclose(eq.trajectories[k].mu, eq0.trajectories[k].mu, rtol=1e-3)


def test_fixed_and_adaptive_rules_agree(toy, toy_eq):
    fixed = solve_nash(toy, NashConfig(step_rule="fixed", max_iterations=20000))
    pos = toy_eq.price_path > 0
    assert np.array_equal(pos, fixed.price_path > 0)
    scale = toy_eq.price_path.max()
    assert np.allclose(fixed.price_path[pos], toy_eq.price_path[pos], rtol=1e-3, atol=1e-4 * scale)
    for k in toy.region_names:
        assert np.allclose(fixed.trajectories[k].emissions, toy_eq.trajectories[k].emissions, rtol=1e-3, atol=1e-5)


def test_thread_count_does_not_change_result(toy, toy_eq, monkeypatch):
    threaded = solve_nash(toy, NashConfig(threads=4))
    assert np.array_equal(threaded.price_path, toy_eq.price_path)
    for k in toy.region_names:
        assert np.array_equal(threaded.trajectories[k].mu, toy_eq.trajectories[k].mu)
    monkeypatch.setenv("ETS_NASH_THREADS", "3")
    assert NashConfig().worker_count() == 3
    monkeypatch.setenv("ETS_NASH_THREADS", "x")
    with pytest.raises(ValueError):
        NashConfig().worker_count()


def test_stricter_caps_raise_prices(toy, toy_eq):
    tight = toy.with_caps({r.name: 0.8 * r.cap_path for r in toy.regions})
    eq = solve_nash(tight, NashConfig())
    assert np.all(eq.price_path >= toy_eq.price_path * (1 - 1e-4))
    assert eq.price_path.sum() > toy_eq.price_path.sum()


def test_not_converged_carries_last_iterate(toy):
    with pytest.raises(NotConverged) as info:
        solve_nash(toy, NashConfig(max_iterations=2))
    sol = info.value.solution
    assert sol is not None and not sol.converged and len(sol.history) == 2
    quiet = solve_nash(toy, NashConfig(max_iterations=2), raise_on_failure=False)
    assert not quiet.converged


def test_regional_infeasibility_names_region():
    err = RegionalInfeasibility("India", 2020, "no feasible start")
    assert err.region == "India" and err.year == 2020
    assert "India" in str(err)


def test_without_trading_price_is_zero_and_caps_hold(toy):
    eq = solve_nash(toy.with_ets(False), NashConfig())
    assert eq.converged
    assert np.all(eq.price_path == 0.0)
    for r in toy.regions:
        tr = eq.trajectories[r.name]
        assert np.all(tr.permit_purchase == 0.0)
        assert np.all(tr.emissions <= r.cap_path[:H] + 1e-9)
