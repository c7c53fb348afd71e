"""Domain types for EVs, prices and RegD signals, plus virtual-EV grouping.

Units: power in kW, energy in kWh, one-hour steps, so a step's energy and its
average power are numerically equal. Prices stay in market units ($/MWh and
$/MW); conversion happens where money is computed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from evmpc.errors import InvalidParameterError

SAMPLES_PER_HOUR = 1800  # 2-second AGC cadence


def required_energy(soc_arrival: float, soc_expected: float, e_rated: float,
                    efficiency: float) -> float:
    """Grid-side energy (kWh) needed to lift an EV from its arrival SoC to its target."""
    if not efficiency > 0:
        raise InvalidParameterError(f"efficiency must be positive, got {efficiency}")
    if not 0.0 <= soc_arrival <= 1.0 or not 0.0 <= soc_expected <= 1.0:
        raise InvalidParameterError("SoC values must lie in [0, 1]")
    if e_rated < 0:
        raise InvalidParameterError(f"e_rated must be non-negative, got {e_rated}")
    return (soc_expected - soc_arrival) * e_rated / efficiency


def flexibility_index(delta_e: float, p_max: float) -> int:
    """Integer charging flexibility index ``ceil(2 * delta_e / p_max)``."""
    if not p_max > 0:
        raise InvalidParameterError(f"p_max must be positive, got {p_max}")
    if delta_e < 0:
        raise InvalidParameterError(f"delta_e must be non-negative, got {delta_e}")
    return int(math.ceil(2.0 * delta_e / p_max))


@dataclass(frozen=True)
class EvRecord:
    """One physical EV's charging request on an absolute hour timeline.

    The EV is plugged in for hours ``arrival_step .. departure_step - 1``.
    ``delta_e`` is grid-side energy; efficiency has already been applied.
    """

    id: str
    arrival_step: int
    departure_step: int
    soc_arrival: float
    soc_expected: float
    e_rated: float
    efficiency: float
    p_max: float
    delta_e: float

    def __post_init__(self):
        if self.departure_step <= self.arrival_step:
            raise InvalidParameterError(
                f"EV {self.id}: departure_step {self.departure_step} must follow "
                f"arrival_step {self.arrival_step}")
        if not self.p_max > 0:
            raise InvalidParameterError(f"EV {self.id}: p_max must be positive")
        if not 0 < self.efficiency <= 1:
            raise InvalidParameterError(f"EV {self.id}: efficiency must lie in (0, 1]")
        if self.delta_e < 0:
            raise InvalidParameterError(f"EV {self.id}: delta_e must be non-negative")
        if self.soc_expected < self.soc_arrival:
            raise InvalidParameterError(f"EV {self.id}: soc_expected below soc_arrival")

    @classmethod
    def from_soc(cls, id: str, arrival_step: int, departure_step: int,
                 soc_arrival: float, soc_expected: float, e_rated: float,
                 efficiency: float, p_max: float) -> "EvRecord":
        delta_e = required_energy(soc_arrival, soc_expected, e_rated, efficiency)
        return cls(id, arrival_step, departure_step, soc_arrival, soc_expected,
                   e_rated, efficiency, p_max, delta_e)

    @classmethod
    def from_energy(cls, id: str, arrival_step: int, departure_step: int,
                    delta_e: float, p_max: float, e_rated: float = 20.0,
                    efficiency: float = 1.0) -> "EvRecord":
        """Build a record from a required energy, back-filling SoC values.

        The arrival SoC is chosen so the target SoC is 1 when the battery can
        hold the request; otherwise the SoC fields are left uninformative (0, 0)
        and only ``delta_e`` is meaningful.
        """
        soc_gap = delta_e * efficiency / e_rated if e_rated > 0 else 0.0
        if soc_gap <= 1.0:
            soc_arrival, soc_expected = 1.0 - soc_gap, 1.0
        else:
            soc_arrival = soc_expected = 0.0
        return cls(id, arrival_step, departure_step, soc_arrival, soc_expected,
                   e_rated, efficiency, p_max, delta_e)

    @property
    def duration(self) -> int:
        return self.departure_step - self.arrival_step

    @property
    def flex_index(self) -> int:
        return flexibility_index(self.delta_e, self.p_max)

    def feasibility_error(self) -> str | None:
        """Return a diagnostic if the request cannot be met within the parking window."""
        cap = self.p_max * self.duration
        if self.delta_e > cap * (1 + 1e-12):
            return (f"EV {self.id}: requested {self.delta_e:.4f} kWh exceeds "
                    f"{self.p_max:.4f} kW x {self.duration} h = {cap:.4f} kWh")
        return None


@dataclass(frozen=True)
class VirtualEv:
    """Aggregate of EVs sharing arrival, departure and flexibility index."""

    arrival_step: int
    departure_step: int
    flex_index: int
    delta_e: float
    p_max: float
    member_ids: tuple[str, ...] = ()

    @property
    def duration(self) -> int:
        return self.departure_step - self.arrival_step


def group_virtual_evs(evs: Iterable[EvRecord]) -> list[VirtualEv]:
    """Partition EVs by (arrival, departure, flexibility index) and sum each group.

    Groups come back sorted by their key, members in input order.
    """
    groups: dict[tuple[int, int, int], list[EvRecord]] = {}
    for ev in evs:
        key = (ev.arrival_step, ev.departure_step, ev.flex_index)
        groups.setdefault(key, []).append(ev)
    out = []
    for key in sorted(groups):
        members = groups[key]
        out.append(VirtualEv(
            arrival_step=key[0],
            departure_step=key[1],
            flex_index=key[2],
            delta_e=math.fsum(ev.delta_e for ev in members),
            p_max=math.fsum(ev.p_max for ev in members),
            member_ids=tuple(ev.id for ev in members),
        ))
    return out


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ConnectedState:
    """Plugged-in set at the current step: remaining energy, power caps, remaining hours."""

    ids: tuple[str, ...]
    remaining_energy: np.ndarray
    power_cap: np.ndarray
    remaining_steps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "remaining_energy", _frozen(self.remaining_energy))
        object.__setattr__(self, "power_cap", _frozen(self.power_cap))
        object.__setattr__(self, "remaining_steps", _frozen(self.remaining_steps, int))
        n = len(self.ids)
        if not (self.remaining_energy.shape == self.power_cap.shape
                == self.remaining_steps.shape == (n,)):
            raise InvalidParameterError("ConnectedState vectors must all have one entry per EV")
        if n and self.remaining_steps.min() < 1:
            raise InvalidParameterError("every connected EV needs remaining_steps >= 1")
        if n and self.remaining_energy.min() < 0:
            raise InvalidParameterError("remaining_energy must be non-negative")

    @classmethod
    def empty(cls) -> "ConnectedState":
        return cls((), np.zeros(0), np.zeros(0), np.zeros(0, dtype=int))

    def __len__(self) -> int:
        return len(self.ids)

    def unreachable(self) -> np.ndarray:
        """Boolean mask of EVs whose remaining energy no longer fits before departure."""
        return self.remaining_energy > self.power_cap * self.remaining_steps * (1 + 1e-12)

    def masks(self, horizon: int) -> np.ndarray:
        """Availability masks for look-ahead steps K+1..K+H, shape (H, n).

        Entry is 1 when the EV is unconnected at that step.
        """
        offsets = np.arange(1, horizon + 1)[:, None]
        return (offsets >= self.remaining_steps[None, :]).astype(int)


@dataclass(frozen=True)
class PriceRecord:
    """Hourly market prices. ``lam`` is the energy price (``lambda`` is reserved)."""

    step: int
    lam: float
    mu_rc: float
    mu_rp: float
    mileage: float = 0.0

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidParameterError(f"hour {self.step}: energy price must be positive")
        if self.mu_rc < 0 or self.mu_rp < 0 or self.mileage < 0:
            raise InvalidParameterError(
                f"hour {self.step}: regulation prices and mileage must be non-negative")

    @property
    def mu(self) -> float:
        """Composite regulation price per unit capacity: capacity + performance x mileage."""
        return self.mu_rc + self.mu_rp * self.mileage


@dataclass(frozen=True)
class RegDTrace:
    """One hour of 2-second RegD samples in [-1, 1]."""

    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = _frozen(self.samples)
        if arr.shape != (SAMPLES_PER_HOUR,):
            raise InvalidParameterError(
                f"a RegD hour needs exactly {SAMPLES_PER_HOUR} samples, got {arr.size}")
        if not np.all(np.isfinite(arr)) or np.abs(arr).max(initial=0.0) > 1.0:
            raise InvalidParameterError("RegD samples must lie in [-1, 1]")
        object.__setattr__(self, "samples", arr)

    @classmethod
    def zeros(cls) -> "RegDTrace":
        return cls(np.zeros(SAMPLES_PER_HOUR))

    @classmethod
    def constant(cls, value: float) -> "RegDTrace":
        return cls(np.full(SAMPLES_PER_HOUR, float(value)))

