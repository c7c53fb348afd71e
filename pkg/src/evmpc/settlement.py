"""Mileage, performance scoring and hourly settlement.

Regulation is paid per MW of cleared capacity, scaled by the performance
score, at the capacity price plus the performance price times mileage.
"""

from __future__ import annotations

import math

from dataclasses import dataclass
from typing import Callable

import numpy as np

from evmpc.errors import InvalidParameterError
from evmpc.model import PriceRecord, RegDTrace


@dataclass(frozen=True)
class SettlementRecord:
    hour: int
    energy_cost: float
    capacity_credit: float
    performance_credit: float
    score: float
    mileage: float
    cleared_mw: float
    energy_mwh: float

    @property
    def regulation_credit(self) -> float:
        return self.capacity_credit + self.performance_credit

    @property
    def net_cost(self) -> float:
        return self.energy_cost - self.regulation_credit


def mileage(trace) -> float:
    """Sum of absolute differences between consecutive RegD samples (correctly rounded)."""
    samples = trace.samples if isinstance(trace, RegDTrace) else np.asarray(trace, float)
    if samples.size < 2:
        return 0.0
    return math.fsum(np.abs(np.diff(samples)).tolist())


def precision_score(instructed, delivered) -> float:
    """1 - sum|delivered - instructed| / sum|instructed|, clipped to [0, 1].

    A signal that asks for nothing is trivially followed, so the score is 1.
    """
    instructed = np.asarray(instructed, dtype=float)
    delivered = np.asarray(delivered, dtype=float)
    if instructed.shape != delivered.shape:
        raise InvalidParameterError(
            f"series lengths differ: {instructed.shape} vs {delivered.shape}")
    scale = np.abs(instructed).sum()
    if scale == 0:
        return 1.0
    err = np.abs(delivered - instructed).sum()
    return float(min(1.0, max(0.0, 1.0 - err / scale)))


ScoreFn = Callable[[np.ndarray, np.ndarray], float]
SCORERS: dict[str, ScoreFn] = {"precision": precision_score}


def performance_score(instructed, delivered, method: str = "precision") -> float:
    try:
        scorer = SCORERS[method]
    except KeyError:
        raise InvalidParameterError(f"unknown score method {method!r}") from None
    return scorer(instructed, delivered)


def settle_hour(cleared_mw: float, score: float, m: float, prices: PriceRecord,
                energy_mwh: float, hour: int | None = None) -> SettlementRecord:
    """Cash flows of one operating hour.

    ``cleared_mw`` is the capacity cleared for the hour (MW, equal to MWh over
    one hour) and ``energy_mwh`` the energy actually drawn from the grid.
    """
    if not 0.0 <= score <= 1.0:
        raise InvalidParameterError(f"score must lie in [0, 1], got {score}")
    if cleared_mw < 0 or m < 0:
        raise InvalidParameterError("cleared capacity and mileage must be non-negative")
    return SettlementRecord(
        hour=prices.step if hour is None else hour,
        energy_cost=prices.lam * energy_mwh,
        capacity_credit=cleared_mw * score * prices.mu_rc,
        performance_credit=cleared_mw * score * m * prices.mu_rp,
        score=score,
        mileage=m,
        cleared_mw=cleared_mw,
        energy_mwh=energy_mwh,
    )
