"""Rolling-horizon operation: solve, allocate, dispatch, settle, correct.

Each hour K the aggregator admits new arrivals, solves the stochastic MPC,
splits the capacity cleared for K across connected EVs, follows the 2-second
RegD signal, settles the hour, and rolls the fleet state forward. The offer
B_{K+1} from the solve is assumed fully cleared for the next hour.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from evmpc.errors import InvalidParameterError, SolverError
from evmpc.lp import LpStatus, solve
from evmpc.model import (SAMPLES_PER_HOUR, ConnectedState, EvRecord, PriceRecord,
                         RegDTrace, group_virtual_evs)
from evmpc.settlement import SettlementRecord, mileage, performance_score, settle_hour
from evmpc.stochastic import (KWH_TO_MWH, MpcDecision, MpcParams, build_mpc_problem,
                              extract_decision, generate_scenarios)

log = logging.getLogger(__name__)

ZERO_TOL = 1e-9
SAMPLE_HOURS = 1.0 / SAMPLES_PER_HOUR


def allocate_regulation(reg_now, cleared: float, slack: float) -> np.ndarray:
    """Split the cleared capacity B_K across EVs in proportion to their planned capacity.

    When the plan already admits a shortfall every EV provides its full
    planned capacity instead.
    """
    y = np.asarray(reg_now, dtype=float)
    if slack > ZERO_TOL:
        return y.copy()
    total = y.sum()
    if total <= 0:
        return np.zeros_like(y)
    r = y * (cleared / total)
    return np.minimum(r, y)


class Dispatch(NamedTuple):
    energy: np.ndarray       # kWh per EV over the hour
    instructed: np.ndarray   # aggregate regulation asked of the EVs, kW per sample
    delivered: np.ndarray    # aggregate regulation actually provided, kW per sample
    power: np.ndarray        # per-EV charging power, shape (n, 1800), kW
    clamp_events: int


def dispatch_hour(pop, r, trace, remaining_energy, p_max) -> Dispatch:
    """Follow one hour of RegD around the POP.

    Instructed charging power is ``pop - signal * r``. Delivered power is that
    value clipped to ``[0, p_max]``, and an EV that has received its remaining
    energy stops drawing power for the rest of the hour. Regulation series are
    reported as ``pop - power`` so they carry the sign of the signal.
    """
    samples = trace.samples if isinstance(trace, RegDTrace) else np.asarray(trace, float)
    if samples.shape != (SAMPLES_PER_HOUR,):
        raise InvalidParameterError(
            f"RegD hour must have {SAMPLES_PER_HOUR} samples, got {samples.size}")
    pop = np.asarray(pop, dtype=float)
    r = np.asarray(r, dtype=float)
    remaining = np.asarray(remaining_energy, dtype=float)
    cap = np.asarray(p_max, dtype=float)
    if pop.size == 0:
        zeros = np.zeros(SAMPLES_PER_HOUR)
        return Dispatch(np.zeros(0), zeros, zeros.copy(), np.zeros((0, SAMPLES_PER_HOUR)), 0)

    asked = pop[:, None] - samples[None, :] * r[:, None]
    clipped = np.clip(asked, 0.0, cap[:, None])
    cum = np.cumsum(clipped, axis=1) * SAMPLE_HOURS
    before = cum - clipped * SAMPLE_HOURS
    room = remaining[:, None]
    # untouched where the energy need is not reached; the crossing sample gets
    # the exact remainder and later samples nothing
    power = np.where(cum <= room, clipped,
                     np.clip((room - before) / SAMPLE_HOURS, 0.0, cap[:, None]))
    clamps = int(np.count_nonzero(np.abs(power - asked) > 1e-9))

    energy = np.minimum(cum[:, -1], remaining)
    instructed = samples * r.sum()
    delivered = (pop[:, None] - power).sum(axis=0)
    return Dispatch(energy, instructed, delivered, power, clamps)


@dataclass(frozen=True)
class Departure:
    id: str
    hour: int
    residual_kwh: float
    soc_deviation: float  # fraction of rated capacity
    overshoot_kwh: float = 0.0


def correct_state(state: ConnectedState, delivered_energy,
                  fleet: Mapping[str, EvRecord] | None = None,
                  hour: int = 0) -> tuple[ConnectedState, list[Departure]]:
    """Roll the connected set forward one hour using the energy actually delivered.

    Residuals below 1e-9 kWh are treated as zero. EVs whose parking time runs
    out are removed and returned as departures.
    """
    delivered = np.asarray(delivered_energy, dtype=float)
    residual = state.remaining_energy - delivered
    overshoot = np.maximum(-residual, 0.0)
    residual = np.where(np.abs(residual) < ZERO_TOL, 0.0, np.maximum(residual, 0.0))
    steps = state.remaining_steps - 1
    leaving = steps <= 0
    departures = []
    for i in np.flatnonzero(leaving):
        ev_id = state.ids[i]
        ev = fleet.get(ev_id) if fleet else None
        dev = residual[i] * ev.efficiency / ev.e_rated if ev and ev.e_rated > 0 else 0.0
        departures.append(Departure(ev_id, hour, float(residual[i]), float(dev),
                                    float(overshoot[i])))
    keep = ~leaving
    new_state = ConnectedState(
        tuple(ev_id for ev_id, k in zip(state.ids, keep) if k),
        residual[keep], state.power_cap[keep], steps[keep],
    )
    return new_state, departures


@dataclass
class HourOutcome:
    hour: int
    prices: PriceRecord
    cleared: float                 # B_K, kWh
    decision: MpcDecision
    ids: tuple[str, ...]
    allocation: np.ndarray         # r_K, kW
    instructed: np.ndarray         # market instruction signal x B_K, kW
    delivered: np.ndarray          # aggregate regulation delivered, kW
    ev_energy: np.ndarray          # kWh per connected EV
    power_min: np.ndarray
    power_max: np.ndarray
    p_max: np.ndarray
    settlement: SettlementRecord
    departures: list[Departure] = field(default_factory=list)
    clamp_events: int = 0
    unreachable: tuple[str, ...] = ()

    @property
    def delivery_gap(self) -> float:
        """B_K - omega_K - 1'Y_K; non-positive when the delivery constraint holds."""
        return self.cleared - self.decision.slack_now - float(self.decision.reg_now.sum())


@dataclass
class SimulationResult:
    outcomes: list[HourOutcome]
    fleet: list[EvRecord]
    rejected: list[tuple[str, str]]
    delivered_by_ev: dict[str, float]

    def __iter__(self):
        return iter(self.outcomes)

    def __len__(self) -> int:
        return len(self.outcomes)

    @property
    def departures(self) -> list[Departure]:
        return [d for o in self.outcomes for d in o.departures]

    @property
    def admitted(self) -> list[EvRecord]:
        bad = {ev_id for ev_id, _ in self.rejected}
        return [ev for ev in self.fleet if ev.id not in bad]

    def totals(self) -> dict[str, float]:
        return totals(self.outcomes)


def totals(outcomes: Sequence[HourOutcome]) -> dict[str, float]:
    """Money, energy and score aggregates over a run."""
    s = [o.settlement for o in outcomes]
    energy = math.fsum(x.energy_cost for x in s)
    credit = math.fsum(x.regulation_credit for x in s)
    scored = [x.score for x in s if x.cleared_mw > 0]
    return {
        "energy_cost": energy,
        "capacity_credit": math.fsum(x.capacity_credit for x in s),
        "performance_credit": math.fsum(x.performance_credit for x in s),
        "regulation_credit": credit,
        "net_cost": energy - credit,
        "revenue": credit,
        "mean_score": float(np.mean(scored)) if scored else 1.0,
        "cleared_mwh": math.fsum(x.cleared_mw for x in s),
        "energy_mwh": math.fsum(x.energy_mwh for x in s),
        "clamp_events": sum(o.clamp_events for o in outcomes),
    }


def simulation_span(fleet: Sequence[EvRecord]) -> range:
    if not fleet:
        return range(0)
    return range(min(ev.arrival_step for ev in fleet), max(ev.departure_step for ev in fleet))


def run(fleet: Sequence[EvRecord], prices: Sequence[PriceRecord],
        regd: Sequence[RegDTrace], params: MpcParams, seed: int = 0,
        hours: range | None = None) -> SimulationResult:
    """Simulate the aggregator hour by hour.

    ``prices`` must cover every step of the span plus the look-ahead horizon;
    ``regd`` every step of the span. Both are indexed by ``PriceRecord.step``
    and list position respectively, starting at step 0.
    """
    price_at = {p.step: p for p in prices}
    span = hours if hours is not None else simulation_span(fleet)
    H = params.horizon
    missing = [k for k in range(span.start, span.stop + H) if k not in price_at]
    if missing:
        raise InvalidParameterError(
            f"prices missing for steps {missing[0]}..{missing[-1]} "
            f"(need {span.start}..{span.stop + H - 1})")
    if span.stop > len(regd):
        raise InvalidParameterError(
            f"RegD traces cover {len(regd)} hours, simulation needs {span.stop}")

    records = {ev.id: ev for ev in fleet}
    if len(records) != len(fleet):
        raise InvalidParameterError("EV ids must be unique")
    rejected: list[tuple[str, str]] = []
    admissible: dict[int, list[EvRecord]] = {}
    for ev in fleet:
        why = ev.feasibility_error()
        if why:
            log.warning("rejecting %s", why)
            rejected.append((ev.id, why))
            continue
        admissible.setdefault(ev.arrival_step, []).append(ev)

    state = ConnectedState.empty()
    cleared = 0.0
    delivered_by_ev: dict[str, float] = {}
    outcomes = []
    for k in span:
        arrivals = admissible.get(k, [])
        if arrivals:
            state = ConnectedState(
                state.ids + tuple(ev.id for ev in arrivals),
                np.concatenate([state.remaining_energy, [ev.delta_e for ev in arrivals]]),
                np.concatenate([state.power_cap, [ev.p_max for ev in arrivals]]),
                np.concatenate([state.remaining_steps,
                                [ev.departure_step - k for ev in arrivals]]),
            )
        unreachable = tuple(np.asarray(state.ids)[state.unreachable()].tolist()) if len(state) else ()

        upcoming = group_virtual_evs(admissible.get(k + 1, []))
        forecast = [price_at[t] for t in range(k + 1, k + 1 + H)]
        scenarios = generate_scenarios(
            forecast, upcoming, params.eps_p, params.eps_ev, params.n_scenarios,
            seed=np.random.SeedSequence([seed, k]))
        problem, index = build_mpc_problem(state, scenarios, cleared, price_at[k].lam, params)
        solution = solve(problem)
        if solution.status is LpStatus.UNBOUNDED:
            raise SolverError(f"hour {k}: MPC LP unbounded (builder bug)", solution.status)
        decision = extract_decision(solution, index)

        r = allocate_regulation(decision.reg_now, cleared, decision.slack_now)
        trace = regd[k]
        out = dispatch_hour(decision.pop_now, r, trace, state.remaining_energy, state.power_cap)
        market_signal = trace.samples * cleared
        score = performance_score(market_signal, out.delivered)
        m = mileage(trace)
        settlement = settle_hour(cleared * KWH_TO_MWH, score, m, price_at[k],
                                 float(out.energy.sum()) * KWH_TO_MWH, hour=k)
        for ev_id, e in zip(state.ids, out.energy):
            delivered_by_ev[ev_id] = delivered_by_ev.get(ev_id, 0.0) + float(e)
        ids = state.ids
        p_max = state.power_cap
        state, departures = correct_state(state, out.energy, records, hour=k)

        outcomes.append(HourOutcome(
            hour=k, prices=price_at[k], cleared=cleared, decision=decision, ids=ids, allocation=r,
            instructed=market_signal, delivered=out.delivered, ev_energy=out.energy,
            power_min=out.power.min(axis=1) if len(ids) else np.zeros(0),
            power_max=out.power.max(axis=1) if len(ids) else np.zeros(0),
            p_max=np.array(p_max), settlement=settlement, departures=departures,
            clamp_events=out.clamp_events, unreachable=unreachable,
        ))
        cleared = decision.bid_next
    return SimulationResult(outcomes, list(fleet), rejected, delivered_by_ev)
