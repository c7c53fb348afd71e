"""Scenario sampling and the CVaR two-stage stochastic MPC linear program.

At hour K the first stage fixes the connected fleet's POP and regulation
capacity for K, the shortfall against the already-cleared capacity B_K, and
the capacity offer B_{K+1}. Each scenario then re-plans hours K+1..K+H for the
connected EVs and for the virtual EVs expected to plug in at K+1. The
objective is the linearized CVaR of the scenario costs.

Energies are kWh, prices $/MWh; every cost coefficient carries a 1e-3 factor
so the objective is in dollars.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from evmpc.errors import InvalidParameterError, SolverError
from evmpc.lp import LpBuilder, LpProblem, LpSolution
from evmpc.model import ConnectedState, PriceRecord, VirtualEv

KWH_TO_MWH = 1e-3
PRICE_FLOOR = 0.01  # $/MWh, lower truncation of perturbed prices
ROUND_OFF = 1e-9


@dataclass(frozen=True)
class MpcParams:
    horizon: int = 6
    alpha: float = 0.2
    phi: float = 115.0
    phi_prime: float = 115.0
    n_scenarios: int = 20
    rho: float = 0.0
    eps_p: float = 3.0
    eps_ev: float = 5.0
    bid_cap: float | None = None  # kWh; None -> physical regulation ceiling

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 2:
            raise InvalidParameterError(f"horizon must be an integer >= 2, got {self.horizon}")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not (self.phi > 0 and self.phi_prime > 0):
            raise InvalidParameterError("penalties phi and phi_prime must be positive")
        if self.n_scenarios < 1:
            raise InvalidParameterError("n_scenarios must be at least 1")
        if self.eps_p < 0 or self.eps_ev < 0:
            raise InvalidParameterError("forecast error scales must be non-negative")
        if self.bid_cap is not None and self.bid_cap < 0:
            raise InvalidParameterError("bid_cap must be non-negative")

    @property
    def alpha_prime(self) -> float:
        return 1.0 / (1.0 - self.alpha)


@dataclass(frozen=True)
class Scenario:
    """One joint realization of look-ahead prices and next-hour arrivals.

    ``lam`` and ``mu`` cover steps K+1..K+H. ``ev_*`` arrays have one entry
    per virtual EV expected at K+1; ``ev_steps`` is its parking duration in
    hours counted from K+1.
    """

    probability: float
    lam: np.ndarray
    mu: np.ndarray
    ev_delta_e: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ev_p_max: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ev_steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        for name in ("lam", "mu", "ev_delta_e", "ev_p_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "ev_steps", np.asarray(self.ev_steps, dtype=int))
        if not 0.0 < self.probability <= 1.0:
            raise InvalidParameterError("scenario probability must lie in (0, 1]")
        if self.lam.shape != self.mu.shape:
            raise InvalidParameterError("lam and mu must have the same length")
        if not (self.ev_delta_e.shape == self.ev_p_max.shape == self.ev_steps.shape):
            raise InvalidParameterError("upcoming-EV vectors must have equal length")
        if np.any(self.lam <= 0) or np.any(self.mu < 0):
            raise InvalidParameterError("scenario prices must be positive")
        if np.any(self.ev_delta_e < 0) or np.any(self.ev_p_max < 0):
            raise InvalidParameterError("upcoming-EV parameters must be non-negative")


def generate_scenarios(forecast_prices: Sequence[PriceRecord],
                       forecast_arrivals: Sequence[VirtualEv],
                       eps_p: float, eps_ev: float, n: int, seed) -> list[Scenario]:
    """Monte Carlo scenarios around a point forecast, each with probability 1/n.

    ``eps_p`` is an absolute standard deviation ($/MWh or $/MW) applied
    independently to the energy, capacity and performance prices; mileage is
    not perturbed. ``eps_ev`` is a percentage standard deviation on each
    upcoming virtual EV's energy and power. ``seed`` is anything
    :func:`numpy.random.default_rng` accepts.
    """
    if n < 1:
        raise InvalidParameterError("scenario count must be at least 1")
    if eps_p < 0 or eps_ev < 0:
        raise InvalidParameterError("error scales must be non-negative")
    rng = np.random.default_rng(seed)
    lam0 = np.array([p.lam for p in forecast_prices], dtype=float)
    rc0 = np.array([p.mu_rc for p in forecast_prices], dtype=float)
    rp0 = np.array([p.mu_rp for p in forecast_prices], dtype=float)
    mileage = np.array([p.mileage for p in forecast_prices], dtype=float)
    de0 = np.array([v.delta_e for v in forecast_arrivals], dtype=float)
    pm0 = np.array([v.p_max for v in forecast_arrivals], dtype=float)
    steps = np.array([v.duration for v in forecast_arrivals], dtype=int)

    price_noise = rng.standard_normal((n, 3, lam0.size)) * eps_p
    ev_noise = rng.standard_normal((n, 2, de0.size)) * (eps_ev / 100.0)

    def floor(nominal, perturbed):
        return np.maximum(perturbed, np.minimum(nominal, PRICE_FLOOR))

    out = []
    for s in range(n):
        lam = floor(lam0, lam0 + price_noise[s, 0])
        rc = floor(rc0, rc0 + price_noise[s, 1])
        rp = floor(rp0, rp0 + price_noise[s, 2])
        out.append(Scenario(
            probability=1.0 / n,
            lam=lam,
            mu=rc + rp * mileage,
            ev_delta_e=np.maximum(de0 * (1.0 + ev_noise[s, 0]), 0.0),
            ev_p_max=np.maximum(pm0 * (1.0 + ev_noise[s, 1]), 0.0),
            ev_steps=steps.copy(),
        ))
    return out


def _ratio(horizon: int, steps: np.ndarray) -> np.ndarray:
    """Share of the remaining request due inside the look-ahead window: min(1, H / T)."""
    return np.minimum(1.0, horizon / np.maximum(steps, 1))


def energy_targets(delta_e: np.ndarray, p_max: np.ndarray, steps: np.ndarray,
                   horizon: int, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Energy each EV must take inside the window, and a flag where it was capped.

    ``window`` is how many horizon steps the EV can use; ``steps`` its
    remaining parking hours from the window start. The proportional share is
    raised so that whatever is left after the window still fits before
    departure, and capped at what the window can physically deliver.
    """
    share = delta_e * _ratio(horizon, steps)
    after = np.maximum(steps - window, 0)
    share = np.maximum(share, delta_e - p_max * after)
    reachable = p_max * np.minimum(steps, window)
    capped = share > reachable * (1 + 1e-12)
    return np.minimum(share, reachable), capped


@dataclass
class MpcIndex:
    """Column indices of every decision variable in the MPC LP."""

    x_now: np.ndarray
    y_now: np.ndarray
    omega_now: int
    bid_next: int
    x_a: list[np.ndarray]       # per scenario, shape (H, |A|)
    y_a: list[np.ndarray]
    x_f: list[np.ndarray]       # per scenario, shape (H, |F|)
    y_f: list[np.ndarray]
    omega_next: np.ndarray      # one per scenario
    var: np.ndarray             # CVaR auxiliaries v^(s)
    z: int
    capped_now: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def n_scenarios(self) -> int:
        return len(self.x_a)


def _box_rows(b: LpBuilder, x: np.ndarray, y: np.ndarray, cap: np.ndarray) -> None:
    """y <= x <= cap - y for paired column arrays (rows skipped where cap is 0)."""
    cap = np.broadcast_to(cap, x.shape).ravel()
    x = x.ravel()
    y = y.ravel()
    keep = cap > 0
    if not keep.any():
        return
    pair = np.column_stack([y[keep], x[keep]])
    b.add_le_rows(pair, [1.0, -1.0], 0.0)
    b.add_le_rows(pair, [1.0, 1.0], cap[keep])


def build_mpc_problem(state: ConnectedState, scenarios: Sequence[Scenario],
                      cleared_now: float, lambda_now: float,
                      params: MpcParams) -> tuple[LpProblem, MpcIndex]:
    """Assemble the CVaR-regularized two-stage MPC LP for the current hour."""
    if not scenarios:
        raise InvalidParameterError("at least one scenario is required")
    if cleared_now < 0:
        raise InvalidParameterError("cleared capacity must be non-negative")
    H = params.horizon
    n_f = scenarios[0].ev_delta_e.size
    for sc in scenarios:
        if sc.lam.size != H:
            raise InvalidParameterError(
                f"scenario covers {sc.lam.size} steps, horizon is {H}")
        if sc.ev_delta_e.size != n_f or not np.array_equal(
                sc.ev_steps, scenarios[0].ev_steps):
            raise InvalidParameterError("all scenarios must describe the same upcoming EVs")

    n_a = len(state)
    p_a = state.power_cap
    t_a = state.remaining_steps
    avail_a = 1 - state.masks(H)                      # (H, n_a), 1 = connected
    target_a, capped_a = energy_targets(state.remaining_energy, p_a, t_a, H, H + 1)

    # upcoming EVs plug in at K+1; row t of avail_f is step K+1+t
    t_f = scenarios[0].ev_steps
    avail_f = (np.arange(H)[:, None] < t_f[None, :]).astype(int)

    if params.bid_cap is not None:
        bid_cap = params.bid_cap
    else:
        bid_cap = p_a.sum() / 2 + max(sc.ev_p_max.sum() for sc in scenarios) / 2
    mu_shift = params.rho
    money = KWH_TO_MWH

    b = LpBuilder()
    x_now = b.add_vars(n_a, "X_K", 0.0, p_a)
    y_now = b.add_vars(n_a, "Y_K", 0.0, p_a / 2)
    omega_now = b.add_var("omega_K", 0.0, max(cleared_now, 0.0))
    bid_next = b.add_var("B_K+1", 0.0, bid_cap)
    _box_rows(b, x_now, y_now, p_a)

    idx_xa, idx_ya, idx_xf, idx_yf, idx_on = [], [], [], [], []
    for s, sc in enumerate(scenarios):
        xa = b.add_vars(H * n_a, f"XA{s}", 0.0, (p_a * avail_a).ravel()).reshape(H, n_a)
        ya = b.add_vars(H * n_a, f"YA{s}", 0.0, (p_a / 2 * avail_a).ravel()).reshape(H, n_a)
        pf = sc.ev_p_max
        xf = b.add_vars(H * n_f, f"XF{s}", 0.0, (pf * avail_f).ravel()).reshape(H, n_f)
        yf = b.add_vars(H * n_f, f"YF{s}", 0.0, (pf / 2 * avail_f).ravel()).reshape(H, n_f)
        on = b.add_var(f"omega_K+1[{s}]", 0.0, bid_cap)
        _box_rows(b, xa, ya, p_a * avail_a)
        _box_rows(b, xf, yf, pf * avail_f)
        # energy balance for connected EVs over K..K+H
        if n_a:
            cols = np.column_stack([x_now, xa.T])
            b.add_eq_rows(cols, 1.0, target_a)
        if n_f:
            target_f, _ = energy_targets(sc.ev_delta_e, pf, t_f, H - 1, H)
            b.add_eq_rows(xf.T, 1.0, target_f)
        # regulation delivered at K+1 covers the offer up to the shortfall
        b.add_le(np.concatenate([[bid_next], ya[0], yf[0], [on]]),
                 np.concatenate([[1.0], -np.ones(n_a + n_f), [-1.0]]), 0.0)
        idx_xa.append(xa)
        idx_ya.append(ya)
        idx_xf.append(xf)
        idx_yf.append(yf)
        idx_on.append(on)

    # delivery of the capacity already cleared for hour K
    b.add_le(np.concatenate([y_now, [omega_now]]), -np.ones(n_a + 1), -cleared_now)

    z = b.add_var("z", -np.inf, np.inf, cost=1.0)
    v = b.add_vars(len(scenarios), "v", 0.0, np.inf,
                   cost=[params.alpha_prime * sc.probability for sc in scenarios])
    for s, sc in enumerate(scenarios):
        mu = sc.mu - mu_shift
        cols = [x_now, [omega_now], [bid_next], [idx_on[s]]]
        coefs = [np.full(n_a, money * lambda_now), [money * params.phi],
                 [-money * mu[0]], [money * params.phi_prime]]
        for t in range(H):
            cols += [idx_xa[s][t], idx_xf[s][t]]
            coefs += [np.full(n_a + n_f, money * sc.lam[t])]
            if t >= 1:
                cols += [idx_ya[s][t], idx_yf[s][t]]
                coefs += [np.full(n_a + n_f, -money * mu[t])]
        cols += [[z], [v[s]]]
        coefs += [[-1.0], [-1.0]]
        b.add_le(np.concatenate(cols), np.concatenate(coefs), 0.0)

    index = MpcIndex(
        x_now=x_now, y_now=y_now, omega_now=omega_now, bid_next=bid_next,
        x_a=idx_xa, y_a=idx_ya, x_f=idx_xf, y_f=idx_yf,
        omega_next=np.array(idx_on, dtype=int), var=v, z=z, capped_now=capped_a,
    )
    return b.build(), index


@dataclass
class MpcDecision:
    """First-stage outcome of one MPC solve (kWh per hour)."""

    pop_now: np.ndarray
    reg_now: np.ndarray
    slack_now: float
    bid_next: float
    objective: float
    var_level: float = 0.0
    second_stage: list[dict] = field(default_factory=list, repr=False)
    capped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool), repr=False)


def _clean(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr[(arr < 0) & (arr > -ROUND_OFF)] = 0.0
    return arr + 0.0  # normalizes -0.0


def extract_decision(solution: LpSolution, index: MpcIndex) -> MpcDecision:
    """Read first-stage decisions (and per-scenario plans) out of an optimal solution."""
    if not solution.ok:
        raise SolverError(f"MPC solve failed with status {solution.status.value}: "
                          f"{solution.message}", status=solution.status)
    x = solution.x
    second = []
    for s in range(index.n_scenarios):
        second.append({
            "x_a": _clean(x[index.x_a[s]]),
            "y_a": _clean(x[index.y_a[s]]),
            "x_f": _clean(x[index.x_f[s]]),
            "y_f": _clean(x[index.y_f[s]]),
            "omega_next": float(_clean([x[index.omega_next[s]]])[0]),
        })
    return MpcDecision(
        pop_now=_clean(x[index.x_now]),
        reg_now=_clean(x[index.y_now]),
        slack_now=float(_clean([x[index.omega_now]])[0]),
        bid_next=float(_clean([x[index.bid_next]])[0]),
        objective=float(solution.objective),
        var_level=float(x[index.z]),
        second_stage=second,
        capped=index.capped_now.copy(),
    )
