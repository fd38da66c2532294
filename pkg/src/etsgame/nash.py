"""Open-loop Nash equilibrium with a global permit market.

Every iteration solves all regional best responses against the previous
iterate (Jacobi order), then moves prices multiplicatively in the direction
of aggregate net permit demand and damps the emission paths:

    m_j = m_{j-1} * exp(omega * sum_i E^P_i)
    E_j = omega * E*_j + (1 - omega) * E_{j-1}

Without a permit market only the emission paths are iterated.

With ``step_rule="adaptive"`` (the default) the price exponent of each year
carries its own multiplier of omega: it grows while that year's net demand
keeps its sign and is halved when the sign flips. The fixed points are the
same as with the plain rule (``step_rule="fixed"``); only the path differs.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import model
from .region import Infeasible, RegionProblem, Trajectory, solve_region, welfare_of
from .scenario import Scenario

log = logging.getLogger(__name__)

THREADS_ENV = "ETS_NASH_THREADS"
HISTORY_COLUMNS = ("iteration", "max_dprice", "max_demission", "max_imbalance")


class NotConverged(RuntimeError):
    """Iteration budget exhausted; ``solution`` holds the last iterate and its history."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class RegionalInfeasibility(RuntimeError):
    def __init__(self, region, year, message):
        super().__init__(f"{region} (year {year}): {message}")
        self.region = region
        self.year = year


@dataclass
class NashConfig:
    omega: float = 0.1
    price_floor: float = 1e-6
    max_iterations: int = 3000
    price_tol: float = 1e-4
    emission_tol: float = 1e-4
    clearing_tol: float = 1e-4
    region_tol: float = 1e-6
    emission_scale: float = 1e-2
    initial_price_path: np.ndarray | None = None
    initial_emissions: dict | None = None
    initial_guess: str = "static"
    step_rule: str = "adaptive"
    step_growth: float = 1.25
    max_step: float = 1e4
    max_log_step: float = 0.5
    threads: int | None = None

    def __post_init__(self):
        if not 0.0 < self.omega <= 1.0:
            raise ValueError(f"omega must lie in (0, 1], got {self.omega}")
        for name in ("price_floor", "price_tol", "emission_tol", "clearing_tol", "region_tol", "emission_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.step_rule not in ("fixed", "adaptive"):
            raise ValueError("step_rule must be 'fixed' or 'adaptive'")
        if self.step_growth < 1.0 or self.max_step < 1.0 or self.max_log_step <= 0.0:
            raise ValueError("step_growth and max_step must be >= 1, max_log_step positive")
        if self.initial_guess not in ("floor", "static"):
            raise ValueError("initial_guess must be 'floor' or 'static'")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.initial_price_path is not None:
            self.initial_price_path = np.asarray(self.initial_price_path, dtype=float)
            if np.any(self.initial_price_path < self.price_floor):
                raise ValueError("initial prices must be at least the price floor")

    def worker_count(self) -> int:
        if self.threads is not None:
            return max(1, int(self.threads))
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        return 1


@dataclass
class EquilibriumSolution:
    scenario: Scenario
    trajectories: dict
    region_solutions: dict
    price_path: np.ndarray
    raw_price_path: np.ndarray
    cum_emissions: np.ndarray
    temperature: np.ndarray
    imbalance: np.ndarray
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    welfare: dict = field(default_factory=dict)

    @property
    def ets_enabled(self) -> bool:
        return self.scenario.ets_enabled

    @property
    def horizon(self) -> int:
        return self.scenario.global_params.horizon

    @property
    def years(self) -> np.ndarray:
        return model.BASE_YEAR + np.arange(self.horizon)

    def emissions(self) -> dict:
        return {k: tr.emissions for k, tr in self.trajectories.items()}


def update_price(m_prev, net_demand, omega, price_floor=1e-6):
    """Multiplicative price step, floored so a price can recover from zero."""
    m_prev = np.asarray(m_prev, dtype=float)
    if np.any(m_prev < 0):
        raise ValueError("prices must be non-negative")
    return np.maximum(price_floor, m_prev * np.exp(omega * np.asarray(net_demand, dtype=float)))


def adapt_steps(steps, net_demand, prev_net, at_floor, growth=1.25, max_step=1e4, min_step=1.0 / 64.0):
    """Per-year step multipliers: grow on a persistent sign, halve on a flip.

    Years pinned at the floor by excess supply keep their multiplier.
    """
    sign = np.sign(np.asarray(net_demand, dtype=float))
    prev = np.sign(np.asarray(prev_net, dtype=float))
    frozen = np.asarray(at_floor) & (sign < 0)
    same = (sign * prev > 0) & ~frozen
    flip = (sign * prev < 0) & ~frozen
    out = np.asarray(steps, dtype=float).copy()
    out[same] = np.minimum(out[same] * growth, max_step)
    out[flip] = np.maximum(out[flip] * 0.5, min_step)
    return out


def reported_price(m, net_demand, price_floor=1e-6):
    """Prices as reported: snapped to 0 under excess supply near the floor."""
    m = np.asarray(m, dtype=float)
    snap = (m < 10.0 * price_floor) & (np.asarray(net_demand) <= 0.0)
    return np.where(snap, 0.0, m)


def update_emissions(E_best, E_prev, omega):
    E_best = np.asarray(E_best, dtype=float)
    E_prev = np.asarray(E_prev, dtype=float)
    if E_best.shape != E_prev.shape:
        raise ValueError("emission arrays must have the same shape")
    if omega == 1.0:
        return E_best.copy()
    # written as a step from E_prev so a fixed point is reproduced exactly
    return E_prev + omega * (E_best - E_prev)


def convergence_report(history) -> str:
    """Per-iteration convergence metrics as CSV text."""
    if not history:
        raise ValueError("convergence history is empty")
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for row in history:
        w.writerow([row["iteration"]] + [repr(float(row[c])) for c in HISTORY_COLUMNS[1:]])
    return out.getvalue()


def _static_mu(tau, rp, t):
    """Abatement rate where the marginal abatement cost equals ``tau`` ($T/GtC)."""
    theta = rp.abatement_coefficient(t)
    return np.clip((np.maximum(tau, 0.0) / (theta * rp.b2)) ** (1.0 / (rp.b2 - 1.0)), 0.0, 1.0)


def static_clearing_price(gross: dict, scc: dict, scenario: Scenario, floor: float) -> np.ndarray:
    """Per-year price clearing a static market where each region abates until
    its marginal cost equals price plus its own carbon cost."""
    H = scenario.global_params.horizon
    t = np.arange(H, dtype=float)
    cap_total = sum(r.cap_path[:H] for r in scenario.regions)

    def demand(m):
        return sum(gross[r.name] * (1.0 - _static_mu(m + scc[r.name], r, t)) for r in scenario.regions)

    lo = np.zeros(H)
    hi = np.full(H, 1.0)
    for _ in range(60):
        short = demand(hi) > cap_total
        if not np.any(short):
            break
        hi = np.where(short, hi * 2.0, hi)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        over = demand(mid) > cap_total
        lo = np.where(over, mid, lo)
        hi = np.where(over, hi, mid)
    return np.maximum(hi, floor)


class _Runner:
    def __init__(self, scenario: Scenario, config: NashConfig):
        self.scenario = scenario
        self.config = config
        self.H = scenario.global_params.horizon
        self.workers = config.worker_count()
        self.x = {r.name: None for r in scenario.regions}
        self.dual = {r.name: None for r in scenario.regions}

    def solve_all(self, prices, emissions):
        """Best responses of every region to ``prices`` and the others' ``emissions``."""
        total = sum(emissions.values())
        sc = self.scenario

        def one(rp):
            others = total - emissions[rp.name]
            prob = RegionProblem(rp, sc.global_params, prices, others, trading=sc.ets_enabled)
            try:
                sol = solve_region(prob, tol=self.config.region_tol, x0=self.x[rp.name],
                                   dual0=self.dual[rp.name])
            except Infeasible as exc:
                raise RegionalInfeasibility(rp.name, model.BASE_YEAR, str(exc)) from exc
            except model.ModelError as exc:
                raise RegionalInfeasibility(rp.name, model.BASE_YEAR, str(exc)) from exc
            return sol

        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                sols = list(pool.map(one, sc.regions))
        else:
            sols = [one(rp) for rp in sc.regions]
        out = {}
        for rp, sol in zip(sc.regions, sols):
            self.x[rp.name] = sol.x
            self.dual[rp.name] = sol.multipliers.get("dual_price")
            out[rp.name] = sol
        return out


def _initial_state(runner: _Runner, config: NashConfig):
    sc = runner.scenario
    H = runner.H
    caps = {r.name: r.cap_path[:H].copy() for r in sc.regions}
    if config.initial_emissions is not None:
        E = {k: np.asarray(v, dtype=float)[:H].copy() for k, v in config.initial_emissions.items()}
    else:
        E = dict(caps)
    if not sc.ets_enabled:
        return np.zeros(H), E
    if config.initial_price_path is not None:
        return config.initial_price_path[:H].copy(), E
    if config.initial_guess == "floor":
        return np.full(H, config.price_floor), E
    # one round of solves at the floor price gives gross emissions and own
    # carbon costs for a static clearing estimate
    sols = runner.solve_all(np.full(H, config.price_floor), E)
    gross = {k: sc.region(k).sigma_path[:H] * s.trajectory.gross_output[:H] for k, s in sols.items()}
    scc = {k: np.maximum(s.scc, 0.0) / model.USD_PER_TC for k, s in sols.items()}
    m0 = static_clearing_price(gross, scc, sc, config.price_floor)
    # years already in excess supply at the floor price start there; the
    # multiplicative update would otherwise need many steps to decay to it
    net_floor = sum(s.trajectory.emissions - sc.region(k).cap_path[:H] for k, s in sols.items())
    m0 = np.where(net_floor <= 0.0, config.price_floor, m0)
    t = np.arange(H, dtype=float)
    if config.initial_emissions is None:
        E = {r.name: gross[r.name] * (1.0 - _static_mu(m0 + scc[r.name], r, t)) for r in sc.regions}
    return m0, E


def _relative_change(new, old, floor):
    return float(np.max(np.abs(new - old) / np.maximum(np.abs(old), floor), initial=0.0))


def solve_nash(scenario: Scenario, config: NashConfig | None = None, raise_on_failure: bool = True,
               warm: "EquilibriumSolution | None" = None) -> EquilibriumSolution:
    """Iterate regional best responses and price updates to the equilibrium.

    ``warm`` seeds prices, emissions and regional decisions from an earlier
    solution on the same grid. When the iteration budget runs out a
    :class:`NotConverged` carrying the last iterate is raised, unless
    ``raise_on_failure`` is false.
    """
    config = config or NashConfig()
    runner = _Runner(scenario, config)
    H = runner.H
    names = scenario.region_names
    if warm is not None and warm.horizon == H:
        m = np.maximum(warm.raw_price_path, config.price_floor) if scenario.ets_enabled else np.zeros(H)
        E = {k: warm.trajectories[k].emissions.copy() for k in names}
        for k in names:
            runner.x[k] = warm.region_solutions[k].x
            runner.dual[k] = warm.region_solutions[k].multipliers.get("dual_price")
    else:
        m, E = _initial_state(runner, config)
    omega = config.omega
    floor = config.price_floor
    history = []
    converged = False
    sols = None
    net = np.zeros(H)
    steps = np.ones(H)
    prev_net = np.zeros(H)
    it = 0
    for it in range(1, config.max_iterations + 1):
        sols = runner.solve_all(m, E)
        E_star = {k: sols[k].trajectory.emissions for k in names}
        E_new = {k: update_emissions(E_star[k], E[k], omega) for k in names}
        dE = max(_relative_change(E_new[k], E[k], config.emission_scale) for k in names)
        kkt = max(s.kkt_residual for s in sols.values())
        if scenario.ets_enabled:
            net = sum(E_star[k] - scenario.region(k).cap_path[:H] for k in names)
            if config.step_rule == "adaptive":
                steps = adapt_steps(steps, net, prev_net, m <= floor * (1.0 + 1e-9),
                                    config.step_growth, config.max_step)
                expo = np.clip(steps * net, -config.max_log_step / omega, config.max_log_step / omega)
                prev_net = net
                m_new = update_price(m, expo, omega, floor)
            else:
                m_new = update_price(m, net, omega, floor)
            dp = _relative_change(m_new, m, floor)
            active = m > floor * (1.0 + 1e-9)
            imb = float(np.max(np.abs(net[active]), initial=0.0))
            # at the floor only excess demand counts as imbalance
            imb = max(imb, float(np.max(np.maximum(net[~active], 0.0), initial=0.0)))
        else:
            m_new, dp, imb = m, 0.0, 0.0
        history.append(dict(iteration=it, max_dprice=dp, max_demission=dE, max_imbalance=imb))
        if it % 50 == 0:
            log.info("iteration %d: dprice %.2e demission %.2e imbalance %.2e", it, dp, dE, imb)
        done = (dp < config.price_tol and dE < config.emission_tol and imb < config.clearing_tol
                and kkt <= config.region_tol)
        if done:
            converged = True
            break
        m, E = m_new, E_new
    sol = _assemble(scenario, config, sols, m, net, it, converged, history)
    if not converged and raise_on_failure:
        raise NotConverged(f"{scenario.name}: no equilibrium after {it} iterations", sol)
    return sol


def _assemble(scenario, config, sols, m, net, iterations, converged, history) -> EquilibriumSolution:
    H = scenario.global_params.horizon
    gp = scenario.global_params
    names = scenario.region_names
    if scenario.ets_enabled:
        price = reported_price(m, net, config.price_floor)
    else:
        price = np.zeros(H)
    zero = price == 0.0
    E = {k: sols[k].trajectory.emissions for k in names}
    caps = {k: scenario.region(k).cap_path[:H] for k in names}
    EP = {}
    if scenario.ets_enabled:
        buy = {k: np.maximum(E[k] - caps[k], 0.0) for k in names}
        sell = {k: np.maximum(caps[k] - E[k], 0.0) for k in names}
        B = sum(buy.values())
        S = sum(sell.values())
        ratio = np.divide(B, S, out=np.zeros(H), where=S > 0)
        for k in names:
            ep = E[k] - caps[k]
            # with a zero price only the trades that are needed are reported
            EP[k] = np.where(zero, buy[k] - sell[k] * np.minimum(ratio, 1.0), ep)
    else:
        EP = {k: np.zeros(H) for k in names}
    trajectories = {}
    welfare = {}
    for k in names:
        tr = sols[k].trajectory
        c = (tr.net_output[:H] - tr.investment - tr.abatement_cost - price * EP[k]) / tr.population[:H]
        new = Trajectory(
            mu=tr.mu, permit_purchase=EP[k], investment=tr.investment, consumption=c,
            capital=tr.capital, emissions=tr.emissions, gross_output=tr.gross_output,
            net_output=tr.net_output, abatement_cost=tr.abatement_cost,
            cum_emissions=tr.cum_emissions, temperature=tr.temperature, population=tr.population,
        )
        trajectories[k] = new
        welfare[k] = welfare_of(new, scenario.region(k), gp)
    cum = np.empty(H + 1)
    cum[0] = gp.initial_cum_emissions
    cum[1:] = cum[0] + np.cumsum(sum(E.values()))
    imbalance = sum(EP.values())
    return EquilibriumSolution(
        scenario=scenario, trajectories=trajectories, region_solutions=sols, price_path=price,
        raw_price_path=np.asarray(m, dtype=float).copy(), cum_emissions=cum,
        temperature=model.temperature(cum, gp.zeta), imbalance=imbalance,
        iterations=iterations, converged=converged, history=history, welfare=welfare,
    )
