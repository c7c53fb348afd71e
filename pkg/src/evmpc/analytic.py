"""Closed-form optimum of the single-EV energy/regulation scheduling problem.

For one EV (or one virtual EV) over its connected slots the problem is

    min  sum_t lam_t * x_t - mu_t * y_t
    s.t. y_t <= x_t <= p_max - y_t,  y_t >= 0,  sum_t x_t = delta_e.

Substituting v_t = 2 x_t / p_max - 1 (and y_t = p_max (1 - |v_t|) / 2 at the
optimum) turns it into a separable convex problem on [-1, 1]^T with one
coupling equality. Each slot then offers two "half-units" of charging at
marginal prices lam - mu and lam + mu, and the optimum buys the cheapest ones.
The price of the last half-unit bought is the threshold ``omega``: the
(F+1)-th smallest element of {lam_t - mu_t, lam_t + mu_t} U {-inf}, where
F = ceil(2 delta_e / p_max).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from evmpc.errors import InfeasibleError, InvalidParameterError

TIE_TOL = 1e-9  # absolute tolerance on price comparisons against omega


@dataclass(frozen=True)
class AnalyticSolution:
    x_star: np.ndarray
    y_star: np.ndarray
    v_star: np.ndarray
    omega: float
    marginal_slot: int | None
    objective: float

    @property
    def n_fractional(self) -> int:
        """Number of slots whose normalized decision is not in {-1, 0, 1}."""
        v = self.v_star
        return int(np.sum(np.abs(v - np.round(v)) > 1e-9))


def ordered_thresholds(lam: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Ascending ordered set {lam - mu, lam + mu} U {-inf} with 2|T| + 1 entries."""
    return np.sort(np.concatenate(([-np.inf], lam - mu, lam + mu)), kind="stable")


def _as_prices(prices) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(prices, dtype=float)
    if arr.size == 0:
        return np.zeros(0), np.zeros(0)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidParameterError("prices must be a sequence of (lambda, mu) pairs")
    return arr[:, 0].copy(), arr[:, 1].copy()


def solve_single(prices: Sequence[tuple[float, float]], delta_e: float, p_max: float,
                 rho: float = 0.0) -> AnalyticSolution:
    """Schedule one (virtual) EV optimally over its connected slots.

    ``prices`` holds one ``(lambda, mu)`` pair per connected slot, with ``mu`` the
    composite regulation price. ``rho`` is a uniform compensation paid to EV
    owners per unit of regulation capacity; it lowers the effective ``mu``.

    Ties (several slots priced exactly at ``omega``) are broken by making the
    lowest-index tied slot the marginal one and filling the others with whole
    half-units in index order, so output is deterministic.
    """
    lam, mu = _as_prices(prices)
    n = lam.size
    if not p_max > 0:
        raise InvalidParameterError(f"p_max must be positive, got {p_max}")
    if delta_e < 0:
        raise InvalidParameterError(f"delta_e must be non-negative, got {delta_e}")
    if n and not np.all(lam > 0):
        raise InvalidParameterError("energy prices must be positive")
    mu_eff = mu - rho
    if n and np.any(mu_eff < 0):
        raise InvalidParameterError(
            "effective regulation price mu - rho must be non-negative")
    if delta_e > p_max * n * (1 + 1e-12):
        raise InfeasibleError(
            f"delta_e {delta_e} exceeds p_max x slots = {p_max * n}")
    if n == 0:
        return AnalyticSolution(np.zeros(0), np.zeros(0), np.zeros(0),
                                -math.inf, None, 0.0)

    units = min(2.0 * delta_e / p_max, 2.0 * n)  # half-units of charging needed
    flex = int(math.ceil(units))
    e = units - n
    ordered = ordered_thresholds(lam, mu_eff)
    omega = float(ordered[flex])

    lo_seg = lam - mu_eff
    hi_seg = lam + mu_eff
    # Half-units strictly cheaper than omega are bought; dearer ones are not.
    lower = -1.0 + (lo_seg < omega - TIE_TOL) + (hi_seg < omega - TIE_TOL)
    upper = -1.0 + (lo_seg <= omega + TIE_TOL) + (hi_seg <= omega + TIE_TOL)
    v = lower.astype(float)

    need = e - v.sum()
    tied = np.flatnonzero(upper > lower)
    marginal = int(tied[0]) if tied.size else None
    if tied.size:
        width = upper - lower
        capacity = float(width[tied].sum())
        need = min(max(need, 0.0), capacity)
        m_width = width[marginal]
        allocated = 0.0
        for idx in tied[1:]:
            surplus = need - allocated - m_width
            if surplus <= 0:
                break
            take = min(width[idx], math.ceil(surplus - TIE_TOL))
            v[idx] += take
            allocated += take
        v[marginal] += min(max(need - allocated, 0.0), m_width)

    x = p_max * (1.0 + v) / 2.0
    y = p_max * (1.0 - np.abs(v)) / 2.0
    objective = float(np.dot(lam, x) - np.dot(mu_eff, y))
    return AnalyticSolution(x, y, v, omega, marginal, objective)


def solve_virtual(prices: Sequence[tuple[float, float]], evs, rho: float = 0.0
                  ) -> AnalyticSolution:
    """Solve for the aggregate of EVs that share a connection window and flexibility index."""
    delta_e = math.fsum(ev.delta_e for ev in evs)
    p_max = math.fsum(ev.p_max for ev in evs)
    return solve_single(prices, delta_e, p_max, rho)
