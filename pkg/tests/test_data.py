import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evmpc import data, engine
from evmpc.errors import InvalidParameterError, ParseError
from evmpc.model import RegDTrace
from evmpc.settlement import mileage
from evmpc.stochastic import MpcParams

HEADER = "hour,lambda,mu_rc,mu_rp,mileage\n"


def _price_file(tmp_path, rows, header=HEADER):
    p = tmp_path / "prices.csv"
    p.write_text(header + "".join(rows))
    return p


def test_load_prices_24_rows(tmp_path):
    p = _price_file(tmp_path, [f"{h},{20 + h},5,0.1,30\n" for h in range(24)])
    prices = data.load_prices(p)
    assert len(prices) == 24 and prices[3].lam == 23.0 and prices[3].mu == pytest.approx(8.0)


def test_negative_lambda_names_row(tmp_path):
    rows = [f"{h},{-5 if h == 4 else 20},5,0.1,30\n" for h in range(24)]
    with pytest.raises(ParseError, match=r"prices.csv:6:"):
        data.load_prices(_price_file(tmp_path, rows))


def test_gap_and_duplicate(tmp_path):
    rows = [f"{h},20,5,0.1,30\n" for h in range(24) if h != 13]
    with pytest.raises(ParseError, match="gap"):
        data.load_prices(_price_file(tmp_path, rows))
    rows = [f"{h},20,5,0.1,30\n" for h in [0, 1, 1, 2]]
    with pytest.raises(ParseError, match="duplicate"):
        data.load_prices(_price_file(tmp_path, rows))


def test_missing_price_file(tmp_path):
    with pytest.raises(ParseError, match="nope.csv"):
        data.load_prices(tmp_path / "nope.csv")


def test_mileage_derived_from_regd(tmp_path):
    regd = data.synthetic_regd(2, 1)
    p = _price_file(tmp_path, ["0,20,5,0.1,\n", "1,21,5,0.1,\n"])
    prices = data.load_prices(p, regd)
    assert prices[1].mileage == mileage(regd[1])
    with pytest.raises(ParseError, match="mileage missing"):
        data.load_prices(p)


def test_regd_roundtrip_and_checks(tmp_path):
    traces = data.synthetic_regd(24, 2)
    path = tmp_path / "r.csv.gz"
    data.write_regd(traces, path)
    back = data.load_regd(path)
    assert len(back) == 24
    assert all(np.array_equal(a.samples, b.samples) for a, b in zip(traces, back))

    bad = tmp_path / "bad.csv"
    bad.write_text("timestamp,signal\n0,0.5\n2,1.2\n")
    with pytest.raises(ParseError, match="outside"):
        data.load_regd(bad)
    short = tmp_path / "short.csv"
    short.write_text("timestamp,signal\n0,0.5\n2,0.1\n")
    with pytest.raises(ParseError, match="whole number"):
        data.load_regd(short)
    gap = tmp_path / "gap.csv"
    gap.write_text("timestamp,signal\n0,0.5\n4,0.1\n")
    with pytest.raises(ParseError, match="cadence"):
        data.load_regd(gap)


def test_zero_regd_file(tmp_path):
    path = tmp_path / "z.csv"
    data.write_regd([RegDTrace.zeros()] * 24, path)
    traces = data.load_regd(path)
    assert len(traces) == 24 and all(np.all(t.samples == 0) for t in traces)


def test_gzip_output_is_reproducible(tmp_path):
    traces = data.synthetic_regd(1, 2)
    data.write_regd(traces, tmp_path / "a.csv.gz")
    data.write_regd(traces, tmp_path / "b.csv.gz")
    assert (tmp_path / "a.csv.gz").read_bytes() == (tmp_path / "b.csv.gz").read_bytes()


def test_synthetic_regd_properties():
    traces = data.synthetic_regd(4, 0)
    for t in traces:
        assert np.abs(t.samples).max() <= 1.0
        assert abs(t.samples.mean()) < 0.15


def test_convert_pjm(tmp_path):
    lmp = tmp_path / "lmp.csv"
    lmp.write_text("datetime_beginning_ept,total_lmp_rt\n7/23/2020 0:00,25.5\n"
                   "7/23/2020 1:00,-3\n7/23/2020 2:00,22\n")
    reg = tmp_path / "reg.csv"
    reg.write_text("datetime_beginning_ept,rmccp,rmpcp\n7/23/2020 0:00,10,0.2\n"
                   "7/23/2020 1:00,11,0.3\n")
    n = data.convert_pjm(lmp, reg, tmp_path / "out.csv")
    assert n == 2
    regd = data.synthetic_regd(2, 0)
    prices = data.load_prices(tmp_path / "out.csv", regd)
    assert prices[1].lam == 0.01 and prices[0].mu_rc == 10.0


def test_reference_fleet():
    fleet = data.generate_fleet(data.REFERENCE_FLEET, seed=0)
    assert len(fleet) == 1000
    counts = {}
    for ev in fleet:
        counts[ev.id.split("-")[0]] = counts.get(ev.id.split("-")[0], 0) + 1
    assert counts == {"I": 600, "II": 200, "III": 200}
    assert all(ev.feasibility_error() is None for ev in fleet)
    assert all(ev.arrival_step < ev.departure_step for ev in fleet)
    t1 = [ev for ev in fleet if ev.id.startswith("I-")]
    assert all(16 <= ev.arrival_step <= 23 and 30 <= ev.departure_step <= 37 for ev in t1)


def test_empty_spec():
    assert data.generate_fleet(data.REFERENCE_FLEET.scaled(0), seed=1) == []


def test_fleet_draws_are_feasible_over_many_seeds():
    spec = data.FleetSpec((data.EvType("t", 1, (0, 23), (0, 23), (0.0, 40.0), (1.0, 8.0)),))
    for seed in range(10_000):
        (ev,) = data.generate_fleet(spec, seed)
        assert ev.delta_e <= ev.p_max * ev.duration


def test_fleet_roundtrip(tmp_path):
    fleet = data.generate_fleet(data.REFERENCE_FLEET.scaled(0.02), seed=3)
    data.write_fleet(fleet, tmp_path / "f.csv")
    assert data.load_fleet(tmp_path / "f.csv") == fleet


def test_fleet_spec_json(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(data.REFERENCE_FLEET.to_json())
    assert data.FleetSpec.load(path) == data.REFERENCE_FLEET
    path.write_text("{not json")
    with pytest.raises(ParseError):
        data.FleetSpec.load(path)
    with pytest.raises(InvalidParameterError):
        data.FleetSpec.from_dict({"types": [{"name": "x"}]})


@given(st.lists(st.floats(0, 5), max_size=50))
def test_histogram_is_a_partition(devs):
    hist = data.soc_histogram(devs)
    assert sum(n for _, _, n in hist) == len(devs)


def test_histogram_boundaries():
    hist = data.soc_histogram([0.0, 0.2999, 0.3, 1.5, 9.0])
    assert [n for *_, n in hist] == [2, 1, 0, 0, 0, 2]


def test_bundled_sample_data(sample_day):
    prices, regd = sample_day
    assert len(prices) == 24 and len(regd) == 24
    assert all(p.mileage == mileage(r) for p, r in zip(prices, regd))


def test_write_report(tmp_path):
    fleet = data.generate_fleet(data.REFERENCE_FLEET.scaled(0.01), seed=2)
    span = engine.simulation_span(fleet)
    prices = data.tile_prices(data.synthetic_prices(24, 1), span.stop + 6)
    from evmpc.model import PriceRecord
    prices = [PriceRecord(p.step, p.lam, 0.0, 0.0, p.mileage) for p in prices]
    regd = [RegDTrace.zeros()] * span.stop
    res = engine.run(fleet, prices, regd, MpcParams(eps_p=0, eps_ev=0, n_scenarios=1))
    summary = data.write_report(res, tmp_path)
    lines = (tmp_path / "hourly.csv").read_text().splitlines()
    assert lines[0].split(",") == list(data.HOURLY_COLUMNS)
    assert len(lines) - 1 == len(res.outcomes)
    col = lines[0].split(",").index("regulation_credit")
    assert all(float(row.split(",")[col]) == 0.0 for row in lines[1:])
    buckets = summary["soc_deviation_buckets"]
    assert buckets[0]["count"] == len(fleet)
    assert sum(b["count"] for b in buckets) == len(fleet)
    assert summary["schema_version"] == data.SCHEMA_VERSION
    with pytest.raises(InvalidParameterError):
        data.write_report([], tmp_path / "empty")
