"""Single-region welfare maximization given permit prices and others' emissions.

With a strictly positive permit price a price-taking region never leaves
permits unused, so its cap constraint binds and the purchase is pinned down
as ``E^P = E - cap``. Substituting it into the budget leaves a problem in
(mu_t, K_{t+1}) with simple bounds on mu only. That reduced problem is solved
by a projected Newton method with the exact Hessian.

When trading is disabled the cap is a genuine state-dependent constraint.
It is enforced through a region-specific shadow price that is iterated to
complementarity, each step being a reduced solve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import model
from .model import GlobalParams, RegionParams

log = logging.getLogger(__name__)

CAP_TOL = 1e-9
INNER_TOL = 1e-10


class Infeasible(RuntimeError):
    """No trajectory with positive consumption could be constructed."""


@dataclass
class RegionProblem:
    region_params: RegionParams
    global_params: GlobalParams
    price_path: np.ndarray
    other_emissions_path: np.ndarray
    initial_capital: float | None = None
    initial_cum_emissions: float | None = None
    trading: bool = True
    endowment: np.ndarray | None = None

    def __post_init__(self):
        H = self.global_params.horizon
        self.price_path = np.asarray(self.price_path, dtype=float)
        self.other_emissions_path = np.asarray(self.other_emissions_path, dtype=float)
        if self.initial_capital is None:
            self.initial_capital = self.region_params.K0
        if self.initial_cum_emissions is None:
            self.initial_cum_emissions = self.global_params.initial_cum_emissions
        if len(self.price_path) < H or len(self.other_emissions_path) < H:
            raise ValueError("price and other-emission paths must span the horizon")
        if self.region_params.path_length() < H + 1:
            raise ValueError(
                f"{self.region_params.name}: exogenous paths need {H + 1} entries"
            )
        if np.any(self.price_path[:H] < 0):
            raise ValueError("permit prices must be non-negative")
        if self.endowment is None:
            self.endowment = np.zeros(H)
        self.endowment = np.asarray(self.endowment, dtype=float)


@dataclass
class Trajectory:
    """Per-year decisions and states of one region.

    Flow variables have ``horizon`` entries; stocks (capital, cumulative
    emissions, temperature) and outputs carry the terminal year as well.
    """

    mu: np.ndarray
    permit_purchase: np.ndarray
    investment: np.ndarray
    consumption: np.ndarray
    capital: np.ndarray
    emissions: np.ndarray
    gross_output: np.ndarray
    net_output: np.ndarray
    abatement_cost: np.ndarray
    cum_emissions: np.ndarray
    temperature: np.ndarray
    population: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.mu)


@dataclass
class RegionSolution:
    trajectory: Trajectory
    welfare: float
    kkt_residual: float
    multipliers: dict
    converged: bool
    iterations: int
    effective_price: np.ndarray
    x: np.ndarray = field(repr=False, default=None)

    @property
    def scc(self) -> np.ndarray:
        """Regional SCC in USD/tC from the transition-equation shadow prices."""
        return -model.USD_PER_TC * self.multipliers["cum_emissions"] / self.multipliers["capital"]


class _Reduced:
    """Objective, gradient and Hessian of the reduced problem.

    Decision vector: ``x = [mu_0..mu_{H-1}, K_1..K_H]``.
    """

    def __init__(self, problem: RegionProblem, price: np.ndarray):
        rp, gp = problem.region_params, problem.global_params
        H = gp.horizon
        self.H = H
        self.rp, self.gp = rp, gp
        self.t = np.arange(H + 1, dtype=float)
        self.A = rp.A_path[: H + 1]
        self.L = rp.L_path[: H + 1]
        self.sigma = rp.sigma_path[:H]
        self.cap = rp.cap_path[:H]
        self.theta = rp.abatement_coefficient(self.t[:H])
        self.price = np.asarray(price, dtype=float)[:H]
        self.others = problem.other_emissions_path[:H]
        self.K0 = float(problem.initial_capital)
        self.cum0 = float(problem.initial_cum_emissions)
        self.endowment = problem.endowment[:H]
        self.share = np.ones(H + 1)
        self.share[H] = gp.consumption_share_terminal
        rho = gp.beta ** self.t
        rho[H] /= 1.0 - gp.beta
        self.rho = rho
        self.LA = self.A * self.L ** (1.0 - gp.alpha)

    def evaluate(self, x, need_derivs=True):
        """Return a dict of path quantities, or None if ``x`` is infeasible."""
        H, gp, rp = self.H, self.gp, self.rp
        mu = x[:H]
        K = np.empty(H + 1)
        K[0] = self.K0
        K[1:] = x[H:]
        if np.any(K <= 0) or np.any(mu < 0) or np.any(mu > 1):
            return None
        a = gp.alpha
        Q = self.LA * K**a
        E = (1.0 - mu) * self.sigma * Q[:H]
        cum = np.empty(H + 1)
        cum[0] = self.cum0
        cum[1:] = self.cum0 + np.cumsum(self.others + E)
        T = gp.zeta * cum
        D = 1.0 + rp.pi1 * T + rp.pi2 * T * T
        if np.any(D <= 0):
            raise model.NonpositiveDamageDenominator(
                f"{rp.name}: damage denominator non-positive along the path"
            )
        Om = 1.0 / D
        mub = mu**rp.b2
        cost_share = self.theta * self.sigma * mub
        P = np.empty(H + 1)
        P[:H] = Om[:H] - cost_share - self.price * self.sigma * (1.0 - mu)
        P[H] = self.share[H] * Om[H]
        C = Q * P
        C[:H] += self.price * self.cap + self.endowment - K[1:] + (1.0 - gp.delta) * K[:H]
        if np.any(C <= 0):
            return None
        c = C / self.L
        g = gp.gamma
        u = c ** (1.0 - g) / (1.0 - g)
        W = float(np.sum(self.rho * self.L * u))
        ev = dict(mu=mu, K=K, Q=Q, E=E, cum=cum, T=T, D=D, Om=Om, P=P, C=C, c=c, W=W, mub=mub)
        if not need_derivs:
            return ev
        f1 = self.rho * c**-g
        f2 = -g * self.rho * c ** (-g - 1.0) / self.L
        D1 = gp.zeta * (rp.pi1 + 2.0 * rp.pi2 * T)
        Om1 = -D1 / D**2
        Om2 = -2.0 * rp.pi2 * gp.zeta**2 / D**2 + 2.0 * D1**2 / D**3
        QK = a * Q / K
        QKK = a * (a - 1.0) * Q / K**2
        mac_t = self.theta * rp.b2 * mu ** (rp.b2 - 1.0)
        C_K = QK * P
        C_K[:H] += 1.0 - gp.delta
        C_mu = Q[:H] * self.sigma * (self.price - mac_t)
        C_cum = Q * self.share * Om1
        E_mu = -self.sigma * Q[:H]
        E_K = (1.0 - mu) * self.sigma * QK[:H]
        # phi[s]: value of one more unit of cumulative emissions from year s+1 on
        acc = f1 * C_cum
        phi = np.cumsum(acc[::-1])[::-1][1:]
        grad = np.empty(2 * H)
        grad[:H] = f1[:H] * C_mu + phi * E_mu
        grad[H:] = f1[1:] * C_K[1:] - f1[:H]
        grad[H : 2 * H - 1] += phi[1:] * E_K[1:]
        ev.update(
            f1=f1, f2=f2, Om1=Om1, Om2=Om2, QK=QK, QKK=QKK, mac_t=mac_t, C_K=C_K,
            C_mu=C_mu, C_cum=C_cum, E_mu=E_mu, E_K=E_K, phi=phi, grad=grad,
        )
        return ev

    def hessian(self, ev):
        H, rp = self.H, self.rp
        n = 2 * H
        mu, Q, P = ev["mu"], ev["Q"], ev["P"]
        f1, f2, phi = ev["f1"], ev["f2"], ev["phi"]
        tH = np.arange(H)
        kidx = H + np.arange(H)  # column of K_{s}, s = 1..H
        # G[t] = gradient of cumulative emissions at year t
        Eloc = np.zeros((H, n))
        Eloc[tH, tH] = ev["E_mu"]
        Eloc[tH[1:], kidx[:-1]] = ev["E_K"][1:]
        G = np.zeros((H + 1, n))
        np.cumsum(Eloc, axis=0, out=G[1:])
        J = ev["C_cum"][:, None] * G
        J[tH, tH] += ev["C_mu"]
        J[np.arange(1, H + 1), kidx] += ev["C_K"][1:]
        J[tH, kidx] -= 1.0
        Hm = (J.T * f2) @ J
        Hm += (G.T * (f1 * Q * self.share * ev["Om2"])) @ G
        # cross terms between K_t and cumulative emissions at t
        M = (f1[1:] * ev["QK"][1:] * self.share[1:] * ev["Om1"][1:])[:, None] * G[1:]
        Hm[kidx, :] += M
        Hm[:, kidx] += M.T
        diag_KK = f1[1:] * ev["QKK"][1:] * P[1:]
        diag_KK[:-1] += phi[1:] * (1.0 - mu[1:]) * self.sigma[1:] * ev["QKK"][1:H]
        Hm[kidx, kidx] += diag_KK
        b2 = rp.b2
        mumu = -Q[:H] * self.sigma * self.theta * b2 * (b2 - 1.0) * mu ** (b2 - 2.0)
        Hm[tH, tH] += f1[:H] * mumu
        cross = f1[1:H] * ev["QK"][1:H] * self.sigma[1:] * (self.price[1:] - ev["mac_t"][1:])
        cross += phi[1:] * (-self.sigma[1:] * ev["QK"][1:H])
        Hm[tH[1:], kidx[:-1]] += cross
        Hm[kidx[:-1], tH[1:]] += cross
        return Hm

    def residual_scale(self, ev):
        H = self.H
        scale = np.empty(2 * H)
        scale[:H] = ev["f1"][:H] * self.sigma * ev["Q"][:H]
        scale[H:] = ev["f1"][:H]
        return scale

    def initial_guess(self, savings=0.2):
        H, gp, rp = self.H, self.gp, self.rp
        mu = np.clip((np.maximum(self.price, 0.0) / (self.theta * rp.b2)) ** (1.0 / (rp.b2 - 1.0)), 0.0, 1.0)
        mu = np.where(self.cap <= 0, np.maximum(mu, 0.5), mu)
        K = np.empty(H + 1)
        K[0] = self.K0
        cum = self.cum0
        for t in range(H):
            Q = self.LA[t] * K[t] ** gp.alpha
            T = gp.zeta * cum
            Y = Q / (1.0 + rp.pi1 * T + rp.pi2 * T * T)
            K[t + 1] = max((1.0 - gp.delta) * K[t] + savings * Y, 1e-3 * K[0])
            cum += self.others[t] + (1.0 - mu[t]) * self.sigma[t] * Q
        return np.concatenate([mu, K[1:]])


def _kkt_residual(ev, red):
    grad = ev["grad"]
    H = red.H
    pg = grad / red.residual_scale(ev)
    mu = ev["mu"]
    # projected gradient step, so iterates within rounding of a bound count as on it
    pg[:H] = np.clip(mu + pg[:H], 0.0, 1.0) - mu
    return float(np.max(np.abs(pg)))


def _projected_newton(red: _Reduced, x0, tol, max_iter):
    H = red.H
    x = x0.copy()
    ev = red.evaluate(x)
    if ev is None:
        raise Infeasible(f"{red.rp.name}: initial guess violates positivity")
    res = _kkt_residual(ev, red)
    it = 0
    while res > tol and it < max_iter:
        it += 1
        grad = ev["grad"]
        mu = ev["mu"]
        pg_norm = np.abs(np.clip(mu + grad[:H] / red.residual_scale(ev)[:H], 0, 1) - mu)
        eps = min(1e-6, float(np.max(pg_norm)))
        active = np.zeros(2 * H, dtype=bool)
        active[:H] = ((mu <= eps) & (grad[:H] < 0)) | ((mu >= 1.0 - eps) & (grad[:H] > 0))
        free = ~active
        Hm = red.hessian(ev)
        negH = -Hm[np.ix_(free, free)]
        d = np.zeros(2 * H)
        d[free] = _solve_pd(negH, grad[free])
        d[:H][active[:H]] = np.where(grad[:H][active[:H]] > 0, 1.0, 0.0) - mu[active[:H]]
        step, x_new, ev_new = 1.0, None, None
        # welfare changes below this are rounding noise; judge such steps by the residual
        noise = 1e3 * np.finfo(float).eps * abs(ev["W"])
        for _ in range(60):
            cand = x + step * d
            cand[:H] = np.clip(cand[:H], 0.0, 1.0)
            ev_c = red.evaluate(cand)
            if ev_c is not None:
                gain = float(grad @ (cand - x))
                if ev_c["W"] >= ev["W"] + 1e-4 * gain:
                    x_new, ev_new = cand, ev_c
                    break
                if step == 1.0 and gain <= noise and _kkt_residual(ev_c, red) < res:
                    x_new, ev_new = cand, ev_c
                    break
            step *= 0.5
        if x_new is None:
            # Newton direction failed; fall back to a scaled gradient step
            scale = red.residual_scale(ev)
            d = grad / (scale * scale) * np.abs(scale)
            step = 1.0
            for _ in range(80):
                cand = x + step * d
                cand[:H] = np.clip(cand[:H], 0.0, 1.0)
                ev_c = red.evaluate(cand)
                if ev_c is not None and ev_c["W"] > ev["W"]:
                    x_new, ev_new = cand, ev_c
                    break
                step *= 0.5
            if x_new is None:
                log.debug("%s: line search stalled at residual %.3e", red.rp.name, res)
                break
        x, ev = x_new, ev_new
        res = _kkt_residual(ev, red)
    return x, ev, res, it


def _solve_pd(A, b):
    """Solve ``A d = b`` for symmetric A, regularising until A is positive definite."""
    diag = np.abs(np.diag(A))
    shift = 0.0
    base = max(float(np.max(diag)), 1e-300) * 1e-12
    for _ in range(40):
        try:
            if shift > 0:
                Ash = A + np.diag(shift * np.maximum(diag, base))
            else:
                Ash = A
            cf = cho_factor(Ash, lower=True, check_finite=False)
            return cho_solve(cf, b, check_finite=False)
        except LinAlgError:
            shift = 1e-8 if shift == 0 else shift * 10.0
    raise LinAlgError("could not regularise the reduced Hessian")


def _build_solution(problem, red, x, ev, res, it, converged, trading_price, tie_zero):
    H = red.H
    rp, gp = red.rp, red.gp
    mu = ev["mu"].copy()
    K = ev["K"]
    E = ev["E"]
    if problem.trading:
        EP = E - red.cap
        zero = trading_price[:H] == 0.0 if tie_zero else np.zeros(H, dtype=bool)
        EP = np.where(zero, np.maximum(EP, 0.0), EP)
    else:
        EP = np.zeros(H)
    I = K[1:] - (1.0 - gp.delta) * K[:H]
    Y = ev["Q"] * ev["Om"]
    Phi = red.theta * red.sigma * ev["mub"] * ev["Q"][:H]
    m = trading_price[:H] if problem.trading else np.zeros(H)
    c = (Y[:H] - I - Phi - m * EP + red.endowment) / red.L[:H]
    traj = Trajectory(
        mu=mu, permit_purchase=EP, investment=I, consumption=c, capital=K.copy(),
        emissions=E.copy(), gross_output=ev["Q"].copy(), net_output=Y, abatement_cost=Phi,
        cum_emissions=ev["cum"].copy(), temperature=ev["T"].copy(), population=red.L.copy(),
    )
    c_all = np.append(c, ev["c"][H])
    welfare = float(np.sum(red.rho * red.L * model.utility(c_all, gp.gamma)))
    f1 = ev["f1"]
    mult = {
        "cap": f1[:H] * red.price,
        "capital": f1[:H].copy(),
        "cum_emissions": ev["phi"].copy(),
        "marginal_utility": f1.copy(),
    }
    return RegionSolution(
        trajectory=traj, welfare=welfare, kkt_residual=res, multipliers=mult,
        converged=converged, iterations=it, effective_price=red.price.copy(), x=x,
    )


def solve_region(problem: RegionProblem, tol: float = 1e-6, max_iter: int = 200,
                 x0=None, dual0=None, max_dual_iter: int = 200) -> RegionSolution:
    """Best response of one region to fixed prices and fixed other emissions.

    ``x0`` warm-starts the decision vector and ``dual0`` the region-specific
    shadow price used when trading is disabled. A solve that exhausts its
    budget returns the best iterate with ``converged=False``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    H = problem.global_params.horizon
    if problem.trading:
        red = _Reduced(problem, problem.price_path[:H])
        x_start = red.initial_guess() if x0 is None else np.asarray(x0, dtype=float).copy()
        if red.evaluate(x_start, need_derivs=False) is None:
            x_start = _feasible_start(red)
        x, ev, res, it = _projected_newton(red, x_start, tol, max_iter)
        return _build_solution(problem, red, x, ev, res, it, res <= tol, problem.price_path, True)
    return _solve_no_trade(problem, tol, max_iter, x0, dual0, max_dual_iter)


def _feasible_start(red):
    for savings in (0.2, 0.1, 0.05, 0.02):
        for mu_floor in (0.0, 0.5, 0.9, 1.0):
            x = red.initial_guess(savings)
            x[: red.H] = np.maximum(x[: red.H], mu_floor)
            if red.evaluate(x, need_derivs=False) is not None:
                return x
    raise Infeasible(f"{red.rp.name}: no positive-consumption starting trajectory")


def _solve_no_trade(problem, tol, max_iter, x0, dual0, max_dual_iter):
    H = problem.global_params.horizon
    rp = problem.region_params
    cap = rp.cap_path[:H]
    lam = np.zeros(H) if dual0 is None else np.asarray(dual0, dtype=float)[:H].copy()
    x = x0
    total_it = 0
    theta = rp.abatement_coefficient(np.arange(H))
    # the cap is enforced through mu, so the inner solves must resolve mu well below CAP_TOL
    inner_tol = min(tol, INNER_TOL)
    for _ in range(max_dual_iter):
        red = _Reduced(problem, lam)
        if x is None:
            x = red.initial_guess()
        if red.evaluate(x, need_derivs=False) is None:
            x = _feasible_start(red)
        x, ev, res, it = _projected_newton(red, x, inner_tol, max_iter)
        total_it += it
        E = ev["E"]
        gross = red.sigma * ev["Q"][:H]
        scc_t = -ev["phi"] / ev["f1"][:H]
        mu_req = np.clip(1.0 - cap / gross, 0.0, 1.0)
        lam_new = np.maximum(theta * rp.b2 * mu_req ** (rp.b2 - 1.0) - scc_t, 0.0)
        full = mu_req >= 1.0
        lam_new[full] = lam_new[full] * (1.0 + 1e-3) + 1e-6
        violation = float(np.max(np.maximum(E - cap, 0.0), initial=0.0))
        # complementarity: a positive shadow price needs a binding cap
        slack_priced = bool(np.any((lam > 0.0) & (cap - E > CAP_TOL)))
        if violation <= CAP_TOL and not slack_priced and res <= tol:
            sol = _build_solution(problem, red, x, ev, res, total_it, True, np.zeros(H), False)
            sol.multipliers["dual_price"] = lam.copy()
            return sol
        lam = lam_new
    sol = _build_solution(problem, red, x, ev, res, total_it, False, np.zeros(H), False)
    sol.multipliers["dual_price"] = lam.copy()
    return sol


def welfare_of(trajectory: Trajectory, region_params: RegionParams, global_params: GlobalParams) -> float:
    """Discounted utility of a trajectory, recomputed from its consumption path."""
    gp = global_params
    H = trajectory.horizon
    L = np.asarray(region_params.L_path[: H + 1], dtype=float)
    disc = gp.beta ** np.arange(H)
    flow = float(np.sum(disc * model.utility(trajectory.consumption, gp.gamma) * L[:H]))
    tail = model.terminal_value(
        trajectory.net_output[H], L[H], gp.gamma, gp.beta, gp.consumption_share_terminal
    )
    return flow + gp.beta**H * float(tail)


def best_response_emissions(solution: RegionSolution):
    """Emissions and permit purchases of a solved region, per year."""
    traj = solution.trajectory
    return traj.emissions.copy(), traj.permit_purchase.copy()
