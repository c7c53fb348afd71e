"""File I/O, synthetic inputs, fleet generation and report emission.

File schemas (version 1):

* prices CSV: ``hour,lambda,mu_rc,mu_rp[,mileage]`` - one row per hour,
  consecutive hours, $/MWh, $/MW, $/dMW, dimensionless mileage.
* RegD CSV: ``timestamp,signal`` - seconds from the start of hour 0 on a
  2-second grid, signal in [-1, 1]. Whole hours only.
* fleet CSV: ``id,arrival_step,departure_step,soc_arrival,soc_expected,
  e_rated,efficiency,p_max,delta_e``.
* fleet spec JSON: ``{"types": [{"name", "count", "arrival": [lo, hi],
  "departure": [lo, hi], "delta_e": [lo, hi], "p_max": [lo, hi],
  "e_rated", "efficiency"}]}``. Hour windows are inclusive; a departure
  window whose upper end is below its lower end wraps into the next day.

Files ending in ``.gz`` are read and written gzip-compressed.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import math
import os
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from evmpc.errors import InvalidParameterError, ParseError
from evmpc.model import SAMPLES_PER_HOUR, EvRecord, PriceRecord, RegDTrace

SCHEMA_VERSION = 1
DATA_DIR_ENV = "EVMPC_DATA_DIR"
SAMPLE_DIR = Path(__file__).parent / "sample_data"
SOC_BUCKET_EDGES_PCT = (0.3, 0.6, 0.9, 1.2, 1.5)
REGD_CADENCE_S = 2
PRICE_COLUMNS = ("hour", "lambda", "mu_rc", "mu_rp", "mileage")
FLEET_COLUMNS = ("id", "arrival_step", "departure_step", "soc_arrival", "soc_expected",
                 "e_rated", "efficiency", "p_max", "delta_e")


def data_dir() -> Path:
    """Directory holding default input files; ``$EVMPC_DATA_DIR`` overrides the bundled one."""
    env = os.environ.get(DATA_DIR_ENV)
    return Path(env) if env else SAMPLE_DIR


def _open_text(path, mode="r"):
    path = Path(path)
    if path.suffix == ".gz":
        # fixed mtime keeps compressed output byte-identical across runs
        raw = open(path, mode + "b")
        if "w" in mode:
            gz = gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0)
        else:
            gz = gzip.GzipFile(fileobj=raw, mode="rb")
        return _Closing(io.TextIOWrapper(gz, encoding="utf-8", newline=""), raw)
    return open(path, mode, encoding="utf-8", newline="")


class _Closing:
    """Text wrapper that also closes the underlying raw file."""

    def __init__(self, wrapper, raw):
        self._wrapper, self._raw = wrapper, raw

    def __getattr__(self, name):
        return getattr(self._wrapper, name)

    def __iter__(self):
        return iter(self._wrapper)

    def __enter__(self):
        return self._wrapper

    def __exit__(self, *exc):
        self._wrapper.close()
        self._raw.close()


def _fmt(x: float) -> str:
    return repr(float(x) + 0.0)


# --- prices -----------------------------------------------------------------

def load_prices(path, regd: Sequence[RegDTrace] | None = None) -> list[PriceRecord]:
    """Read an hourly price file.

    When the mileage column is missing or blank, mileage is computed from the
    paired RegD traces (``regd[hour]``).
    """
    from evmpc.settlement import mileage as trace_mileage

    path = Path(path)
    if not path.exists():
        raise ParseError("price file not found", path)
    rows = []
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", path, 1)
        header = [h.strip().lower() for h in header]
        missing = [c for c in PRICE_COLUMNS[:4] if c not in header]
        if missing:
            raise ParseError(f"missing columns {missing}; expected {list(PRICE_COLUMNS)}",
                             path, 1)
        col = {name: header.index(name) for name in PRICE_COLUMNS if name in header}
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                hour = int(row[col["hour"]])
                lam = float(row[col["lambda"]])
                mu_rc = float(row[col["mu_rc"]])
                mu_rp = float(row[col["mu_rp"]])
                raw_m = row[col["mileage"]].strip() if "mileage" in col and \
                    col["mileage"] < len(row) else ""
                m = float(raw_m) if raw_m else None
            except (ValueError, IndexError) as exc:
                raise ParseError(f"malformed row {row!r}: {exc}", path, line_no) from None
            if not all(math.isfinite(v) for v in (lam, mu_rc, mu_rp)):
                raise ParseError("non-finite price", path, line_no)
            if lam <= 0:
                raise ParseError(f"hour {hour}: energy price must be positive, got {lam}",
                                 path, line_no)
            if mu_rc < 0 or mu_rp < 0 or (m is not None and m < 0):
                raise ParseError(f"hour {hour}: negative regulation price or mileage",
                                 path, line_no)
            rows.append((line_no, hour, lam, mu_rc, mu_rp, m))
    if not rows:
        raise ParseError("no price rows", path)
    rows.sort(key=lambda r: r[1])
    for (_, prev, *_), (line_no, hour, *_) in zip(rows, rows[1:]):
        if hour == prev:
            raise ParseError(f"duplicate hour {hour}", path, line_no)
        if hour != prev + 1:
            raise ParseError(f"gap in hours: {prev} is followed by {hour}", path, line_no)
    out = []
    for line_no, hour, lam, mu_rc, mu_rp, m in rows:
        if m is None:
            if regd is None or hour >= len(regd) or hour < 0:
                raise ParseError(f"hour {hour}: mileage missing and no RegD trace to derive it",
                                 path, line_no)
            m = trace_mileage(regd[hour])
        out.append(PriceRecord(hour, lam, mu_rc, mu_rp, m))
    return out


def write_prices(prices: Iterable[PriceRecord], path) -> None:
    with _open_text(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRICE_COLUMNS)
        for p in prices:
            w.writerow([p.step, _fmt(p.lam), _fmt(p.mu_rc), _fmt(p.mu_rp), _fmt(p.mileage)])


def convert_pjm(lmp_path, reg_path, out_path) -> int:
    """Build a price file from PJM Data Miner exports.

    ``lmp_path`` is an hourly real-time LMP export (``datetime_beginning_ept``,
    ``total_lmp_rt``); ``reg_path`` a regulation market results export
    (``datetime_beginning_ept``, ``rmccp``, ``rmpcp``). Rows are matched on the
    timestamp and numbered 0.. in time order. Mileage is left blank so it is
    derived from the RegD file at load time. Non-positive LMPs are floored at
    0.01 $/MWh.
    """
    def read(path, cols):
        with _open_text(path) as fh:
            reader = csv.DictReader(fh)
            table = {}
            for line_no, row in enumerate(reader, start=2):
                try:
                    table[row["datetime_beginning_ept"].strip()] = [float(row[c]) for c in cols]
                except (KeyError, ValueError) as exc:
                    raise ParseError(f"bad PJM row: {exc}", path, line_no) from None
            return table

    lmp = read(lmp_path, ["total_lmp_rt"])
    reg = read(reg_path, ["rmccp", "rmpcp"])
    stamps = [s for s in lmp if s in reg]  # export order is chronological
    if not stamps:
        raise ParseError("no matching timestamps between LMP and regulation exports", lmp_path)
    with _open_text(out_path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRICE_COLUMNS)
        for hour, stamp in enumerate(stamps):
            lam = max(lmp[stamp][0], 0.01)
            w.writerow([hour, _fmt(lam), _fmt(max(reg[stamp][0], 0.0)),
                        _fmt(max(reg[stamp][1], 0.0)), ""])
    return len(stamps)


# --- RegD -------------------------------------------------------------------

def load_regd(path) -> list[RegDTrace]:
    """Read a 2-second RegD file into one trace per hour."""
    path = Path(path)
    if not path.exists():
        raise ParseError("RegD file not found", path)
    values = []
    expected_t = None
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["timestamp", "signal"]:
            raise ParseError("header must be 'timestamp,signal'", path, 1)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t = float(row[0])
                v = float(row[1])
            except (ValueError, IndexError):
                raise ParseError(f"malformed row {row!r}", path, line_no) from None
            if expected_t is None:
                expected_t = t
            if abs(t - expected_t) > 1e-6:
                raise ParseError(
                    f"timestamp {t} breaks the {REGD_CADENCE_S}-second cadence "
                    f"(expected {expected_t})", path, line_no)
            expected_t = t + REGD_CADENCE_S
            if not (-1.0 <= v <= 1.0):
                raise ParseError(f"signal {v} outside [-1, 1]", path, line_no)
            values.append(v)
    if len(values) % SAMPLES_PER_HOUR:
        raise ParseError(
            f"{len(values)} samples is not a whole number of hours "
            f"({SAMPLES_PER_HOUR} per hour)", path)
    arr = np.array(values, dtype=float).reshape(-1, SAMPLES_PER_HOUR)
    return [RegDTrace(row) for row in arr]


def write_regd(traces: Sequence[RegDTrace], path) -> None:
    with _open_text(path, "w") as fh:
        fh.write("timestamp,signal\n")
        t = 0
        for trace in traces:
            for v in trace.samples:
                fh.write(f"{t},{float(v) + 0.0!r}\n")
                t += REGD_CADENCE_S


# --- synthetic inputs -------------------------------------------------------

def synthetic_regd(hours: int, seed: int, amplitude: float = 0.9,
                   drift: float = 0.04) -> list[RegDTrace]:
    """RegD-like traces: fast swings bounded by 1 that are nearly energy neutral.

    Sinusoids whose periods divide 15 minutes plus a filtered random component
    average to zero over each quarter hour; a small random offset per quarter
    (standard deviation ``drift``) leaves the residual hourly energy bias that
    real RegD signals show.
    """
    rng = np.random.default_rng(seed)
    n = hours * SAMPLES_PER_HOUR
    gamma = np.arange(n)
    quarter = SAMPLES_PER_HOUR // 4
    sig = np.zeros(n)
    for k in (1, 2, 3, 5, 6, 9):
        a = rng.uniform(0.2, 1.0) / k ** 0.5
        sig += a * np.sin(2 * np.pi * k * gamma / quarter + rng.uniform(0, 2 * np.pi))
    eps = rng.standard_normal(n) * 0.05
    noise = np.zeros(n)
    for i in range(1, n):
        noise[i] = 0.97 * noise[i - 1] + eps[i]
    sig += noise
    sig = sig.reshape(-1, quarter)
    sig -= sig.mean(axis=1, keepdims=True)
    sig *= (amplitude - 3 * drift) / np.abs(sig).max()
    sig += np.clip(rng.normal(0.0, drift, (sig.shape[0], 1)), -3 * drift, 3 * drift)
    sig = np.clip(sig.ravel(), -1.0, 1.0)
    return [RegDTrace(h) for h in sig.reshape(hours, SAMPLES_PER_HOUR)]


def synthetic_prices(hours: int, seed: int, regd: Sequence[RegDTrace] | None = None
                     ) -> list[PriceRecord]:
    """A summer-weekday-shaped day of energy and regulation prices.

    Energy follows a night trough and an afternoon/evening peak; capacity and
    performance prices loosely track it. Mileage comes from ``regd`` when given.
    """
    from evmpc.settlement import mileage as trace_mileage

    rng = np.random.default_rng(seed)
    out = []
    for h in range(hours):
        clock = h % 24
        base = 22 + 18 * np.exp(-((clock - 17.5) / 3.5) ** 2) + 6 * np.exp(-((clock - 9) / 2.5) ** 2)
        lam = max(base + rng.normal(0, 2.0), 5.0)
        mu_rc = max(6 + 0.35 * (base - 22) + rng.normal(0, 1.5), 0.5)
        mu_rp = max(0.12 + 0.004 * (base - 22) + rng.normal(0, 0.02), 0.01)
        m = trace_mileage(regd[h]) if regd is not None and h < len(regd) else 50.0
        out.append(PriceRecord(h, round(lam, 4), round(mu_rc, 4), round(mu_rp, 5), m))
    return out


def tile_prices(prices: Sequence[PriceRecord], hours: int) -> list[PriceRecord]:
    """Repeat a price profile (typically one day) to cover ``hours`` steps."""
    if not prices:
        raise InvalidParameterError("cannot tile an empty price list")
    base = sorted(prices, key=lambda p: p.step)
    start = base[0].step
    out = []
    for k in range(hours):
        p = base[k % len(base)]
        out.append(PriceRecord(start + k, p.lam, p.mu_rc, p.mu_rp, p.mileage))
    return out


def tile_regd(traces: Sequence[RegDTrace], hours: int) -> list[RegDTrace]:
    if not traces:
        raise InvalidParameterError("cannot tile an empty trace list")
    return [traces[k % len(traces)] for k in range(hours)]


# --- fleets -----------------------------------------------------------------

@dataclass(frozen=True)
class EvType:
    name: str
    count: int
    arrival: tuple[int, int]
    departure: tuple[int, int]
    delta_e: tuple[float, float] = (10.0, 24.0)
    p_max: tuple[float, float] = (4.0, 8.0)
    e_rated: float = 20.0
    efficiency: float = 1.0

    def __post_init__(self):
        if self.count < 0:
            raise InvalidParameterError(f"type {self.name}: count must be >= 0")
        for label in ("arrival", "delta_e", "p_max"):
            lo, hi = getattr(self, label)
            if lo > hi:
                raise InvalidParameterError(f"type {self.name}: empty {label} range")
        if self.p_max[0] <= 0:
            raise InvalidParameterError(f"type {self.name}: p_max must be positive")


@dataclass(frozen=True)
class FleetSpec:
    types: tuple[EvType, ...] = field(default_factory=tuple)

    @property
    def size(self) -> int:
        return sum(t.count for t in self.types)

    def scaled(self, factor: float) -> "FleetSpec":
        """Same proportions with counts multiplied by ``factor`` (rounded)."""
        return FleetSpec(tuple(
            EvType(**{**asdict(t), "count": int(round(t.count * factor))}) for t in self.types))

    def to_json(self) -> str:
        return json.dumps({"types": [asdict(t) for t in self.types]}, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "FleetSpec":
        try:
            types = []
            for t in data["types"]:
                t = dict(t)
                for key in ("arrival", "departure", "delta_e", "p_max"):
                    if key in t:
                        t[key] = tuple(t[key])
                types.append(EvType(**t))
        except (KeyError, TypeError) as exc:
            raise InvalidParameterError(f"invalid fleet spec: {exc}") from None
        return cls(tuple(types))

    @classmethod
    def load(cls, path) -> "FleetSpec":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ParseError("fleet spec not found", path) from None
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
        return cls.from_dict(data)


REFERENCE_FLEET = FleetSpec((
    EvType("I", 600, (16, 23), (6, 13)),
    EvType("II", 200, (0, 7), (14, 21)),
    EvType("III", 200, (8, 15), (22, 5)),
))


def _uniform_int(rng: random.Random, lo: int, hi: int) -> int:
    # floor-based draw keeps the stream stable across Python versions
    return lo + min(int(rng.random() * (hi - lo + 1)), hi - lo)


def _uniform(rng: random.Random, lo: float, hi: float) -> float:
    return lo + (hi - lo) * rng.random()


def generate_fleet(spec: FleetSpec, seed: int) -> list[EvRecord]:
    """Draw a fleet from per-type uniform distributions.

    Uses :class:`random.Random` (Mersenne Twister) through ``random()`` only,
    which Python keeps reproducible across versions and platforms. Departures
    at or before the arrival hour move to the next day; infeasible draws are
    redrawn.
    """
    rng = random.Random(seed)
    fleet = []
    for ev_type in spec.types:
        d_lo, d_hi = ev_type.departure
        if d_hi < d_lo:
            d_hi += 24
        for n in range(ev_type.count):
            for _ in range(1000):
                arr = _uniform_int(rng, *ev_type.arrival)
                dep = _uniform_int(rng, d_lo, d_hi)
                while dep <= arr:
                    dep += 24
                delta_e = _uniform(rng, *ev_type.delta_e)
                p_max = _uniform(rng, *ev_type.p_max)
                if delta_e <= p_max * (dep - arr):
                    break
            else:
                raise InvalidParameterError(
                    f"type {ev_type.name}: could not draw a feasible EV in 1000 tries")
            fleet.append(EvRecord.from_energy(
                f"{ev_type.name}-{n:04d}", arr, dep, delta_e, p_max,
                e_rated=ev_type.e_rated, efficiency=ev_type.efficiency))
    return fleet


def write_fleet(fleet: Iterable[EvRecord], path) -> None:
    with _open_text(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FLEET_COLUMNS)
        for ev in fleet:
            w.writerow([ev.id, ev.arrival_step, ev.departure_step, _fmt(ev.soc_arrival),
                        _fmt(ev.soc_expected), _fmt(ev.e_rated), _fmt(ev.efficiency),
                        _fmt(ev.p_max), _fmt(ev.delta_e)])


def load_fleet(path) -> list[EvRecord]:
    path = Path(path)
    if not path.exists():
        raise ParseError("fleet file not found", path)
    out = []
    with _open_text(path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(FLEET_COLUMNS) - set(reader.fieldnames):
            raise ParseError(f"fleet header must contain {list(FLEET_COLUMNS)}", path, 1)
        for line_no, row in enumerate(reader, start=2):
            try:
                out.append(EvRecord(
                    row["id"], int(row["arrival_step"]), int(row["departure_step"]),
                    float(row["soc_arrival"]), float(row["soc_expected"]),
                    float(row["e_rated"]), float(row["efficiency"]),
                    float(row["p_max"]), float(row["delta_e"])))
            except (ValueError, InvalidParameterError) as exc:
                raise ParseError(str(exc), path, line_no) from None
    return out


# --- reports ----------------------------------------------------------------

HOURLY_COLUMNS = (
    "hour", "cleared_kwh", "bid_next_kwh", "slack_kwh", "reg_capacity_kwh", "pop_kwh",
    "energy_kwh", "lambda", "mu_rc", "mu_rp", "mileage", "score", "energy_cost",
    "capacity_credit", "performance_credit", "regulation_credit", "net_cost",
    "mpc_objective", "n_connected", "n_departed", "clamp_events",
)


def soc_histogram(deviations_pct: Iterable[float],
                  edges: Sequence[float] = SOC_BUCKET_EDGES_PCT) -> list[tuple[float, float, int]]:
    """Count deviations into [0, e1), [e1, e2), ..., [e_last, inf)."""
    bounds = [0.0, *edges, math.inf]
    counts = [0] * (len(bounds) - 1)
    for d in deviations_pct:
        for i in range(len(counts)):
            if d < bounds[i + 1]:
                counts[i] += 1
                break
    return [(bounds[i], bounds[i + 1], counts[i]) for i in range(len(counts))]


def write_report(result, path) -> dict:
    """Write hourly settlement, departures, SoC histogram and a JSON summary into ``path``.

    Returns the summary dictionary.
    """
    from evmpc.engine import SimulationResult, totals

    outcomes = result.outcomes if isinstance(result, SimulationResult) else list(result)
    if not outcomes:
        raise InvalidParameterError("no hourly outcomes to report")
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(out_dir / "hourly.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HOURLY_COLUMNS)
        for o in outcomes:
            s = o.settlement
            d = o.decision
            w.writerow([
                o.hour, _fmt(o.cleared), _fmt(d.bid_next), _fmt(d.slack_now),
                _fmt(d.reg_now.sum()), _fmt(d.pop_now.sum()), _fmt(o.ev_energy.sum()),
                _fmt(o.prices.lam), _fmt(o.prices.mu_rc), _fmt(o.prices.mu_rp), _fmt(s.mileage), _fmt(s.score), _fmt(s.energy_cost),
                _fmt(s.capacity_credit), _fmt(s.performance_credit),
                _fmt(s.regulation_credit), _fmt(s.net_cost), _fmt(d.objective),
                len(o.ids), len(o.departures), o.clamp_events,
            ])

    departures = [dep for o in outcomes for dep in o.departures]
    with open(out_dir / "departures.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "hour", "residual_kwh", "soc_deviation_pct", "overshoot_kwh"])
        for dep in departures:
            w.writerow([dep.id, dep.hour, _fmt(dep.residual_kwh),
                        _fmt(100 * dep.soc_deviation), _fmt(dep.overshoot_kwh)])

    hist = soc_histogram(100 * dep.soc_deviation for dep in departures)
    with open(out_dir / "soc_deviation.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lower_pct", "upper_pct", "count"])
        for lo, hi, n in hist:
            w.writerow([_fmt(lo), "inf" if math.isinf(hi) else _fmt(hi), n])

    summary = {
        "schema_version": SCHEMA_VERSION,
        "hours": [outcomes[0].hour, outcomes[-1].hour],
        "n_departed": len(departures),
        "n_rejected": len(getattr(result, "rejected", [])),
        "rejected": [ev_id for ev_id, _ in getattr(result, "rejected", [])],
        "totals": totals(outcomes),
        "soc_deviation_buckets": [
            {"lower_pct": lo, "upper_pct": None if math.isinf(hi) else hi, "count": n}
            for lo, hi, n in hist],
        "max_soc_deviation_pct": max((100 * d.soc_deviation for d in departures), default=0.0),
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary

