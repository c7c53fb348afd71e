"""Command-line front end.

    evmpc simulate [options]                 run one simulation, write reports
    evmpc sweep {horizon,alpha,penalty} V..  one simulation per value, tidy table
    evmpc gen-fleet [--spec F] [--out F]     draw a fleet file from a spec
    evmpc report DIR                         print a report summary, render figures

Every option can also be given in a JSON config file (``--config``) using the
option's long name with dashes replaced by underscores, e.g.
``{"horizon": 8, "phi_prime": 60, "prices": "my_prices.csv"}``. Precedence is
command-line flag > config file > built-in default. Relative paths in the
config file are resolved against the file's directory.

Exit codes: 0 success, 2 usage or configuration error, 3 input data error,
4 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

from evmpc import data, engine, plots
from evmpc.errors import (EvmpcError, InfeasibleError, InvalidParameterError, ParseError,
                          SolverError)
from evmpc.stochastic import MpcParams

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_SOLVER = 4

DEFAULT_FLEET_SCALE = 0.1  # desk scale: 100 of the 1000-EV reference fleet
SWEEP_PARAMS = {"horizon": "horizon", "alpha": "alpha", "penalty": "phi_prime"}
SWEEP_COLUMNS = ("param", "value", "net_cost", "revenue", "mean_score", "cleared_mwh",
                 "status", "error")

log = logging.getLogger("evmpc")


@dataclass(frozen=True)
class RunConfig:
    prices: str | None = None      # CSV; default <data dir>/prices.csv
    regd: str | None = None        # CSV(.gz); default <data dir>/regd.csv.gz
    fleet: str | None = None       # fleet CSV; takes priority over fleet_spec
    fleet_spec: str | None = None  # JSON spec; default <data dir>/reference_fleet.json
    fleet_scale: float = DEFAULT_FLEET_SCALE
    horizon: int = 6
    alpha: float = 0.2
    phi: float = 115.0
    phi_prime: float = 115.0
    scenarios: int = 20
    rho: float = 0.0
    eps_p: float = 3.0
    eps_ev: float = 5.0
    seed: int = 0
    out: str = "evmpc_out"
    data_dir: str | None = None
    figures: bool = False

    def params(self) -> MpcParams:
        return MpcParams(horizon=self.horizon, alpha=self.alpha, phi=self.phi,
                         phi_prime=self.phi_prime, n_scenarios=self.scenarios,
                         rho=self.rho, eps_p=self.eps_p, eps_ev=self.eps_ev)

    def validate(self) -> None:
        self.params()
        if not self.fleet_scale > 0:
            raise InvalidParameterError("fleet_scale must be positive")

    def base_dir(self) -> Path:
        return Path(self.data_dir) if self.data_dir else data.data_dir()


CONFIG_KEYS = {f.name for f in fields(RunConfig)}
_INT_KEYS = {"horizon", "scenarios", "seed"}
_PATH_KEYS = {"prices", "regd", "fleet", "fleet_spec", "out", "data_dir"}


def load_config(path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InvalidParameterError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidParameterError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise InvalidParameterError(f"{path}: config must be a JSON object")
    unknown = sorted(set(raw) - CONFIG_KEYS)
    if unknown:
        raise InvalidParameterError(f"{path}: unknown config keys {unknown}")
    out = {}
    for key, value in raw.items():
        if key in _PATH_KEYS and value is not None:
            value = str(path.parent / value)
        elif key in _INT_KEYS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise InvalidParameterError(f"{path}: {key} must be an integer")
        elif key == "figures":
            if not isinstance(value, bool):
                raise InvalidParameterError(f"{path}: figures must be true or false")
        elif not isinstance(value, (int, float)) or isinstance(value, bool):
            raise InvalidParameterError(f"{path}: {key} must be a number")
        out[key] = value
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the config file and explicit flags (flags win)."""
    values = load_config(args.config) if getattr(args, "config", None) else {}
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# --- inputs -----------------------------------------------------------------

def _input_path(cfg: RunConfig, explicit: str | None, default_name: str) -> Path:
    path = Path(explicit) if explicit else cfg.base_dir() / default_name
    if not path.exists():
        raise ParseError("input file not found", path)
    return path


def load_inputs(cfg: RunConfig):
    """Fleet plus prices and traces tiled to cover the fleet's span and the horizon."""
    if cfg.fleet:
        fleet = data.load_fleet(_input_path(cfg, cfg.fleet, ""))
    else:
        spec = data.FleetSpec.load(_input_path(cfg, cfg.fleet_spec, "reference_fleet.json"))
        fleet = data.generate_fleet(spec.scaled(cfg.fleet_scale), cfg.seed)
    regd = data.load_regd(_input_path(cfg, cfg.regd, "regd.csv.gz"))
    prices = data.load_prices(_input_path(cfg, cfg.prices, "prices.csv"), regd)
    span = engine.simulation_span(fleet)
    if len(span) == 0:
        raise InvalidParameterError("fleet is empty; nothing to simulate")
    prices = data.tile_prices(prices, span.stop + cfg.horizon)
    regd = data.tile_regd(regd, span.stop)
    return fleet, prices, regd


def simulate(cfg: RunConfig, inputs=None) -> engine.SimulationResult:
    fleet, prices, regd = inputs if inputs is not None else load_inputs(cfg)
    return engine.run(fleet, prices, regd, cfg.params(), seed=cfg.seed)


# --- figures ----------------------------------------------------------------

def render_report_figures(report_dir) -> list[Path]:
    """Render PNGs from the CSV/JSON files of a report directory."""
    report_dir = Path(report_dir)
    hours, cleared, energy, credit, score = [], [], [], [], []
    with open(report_dir / "hourly.csv", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            hours.append(int(row["hour"]))
            cleared.append(float(row["cleared_kwh"]) * 1e-3)
            energy.append(float(row["energy_cost"]))
            credit.append(float(row["regulation_credit"]))
            score.append(float(row["score"]))
    summary = json.loads((report_dir / "summary.json").read_text(encoding="utf-8"))
    buckets = [(b["lower_pct"], b["upper_pct"], b["count"])
               for b in summary["soc_deviation_buckets"]]
    return [
        plots.hourly_settlement(hours, cleared, energy, credit, score,
                                report_dir / "hourly_settlement.png"),
        plots.soc_histogram(buckets, report_dir / "soc_deviation.png"),
    ]


# --- commands ---------------------------------------------------------------

def _print_summary(summary: dict, stream=None) -> None:
    stream = stream or sys.stdout
    t = summary["totals"]
    lo, hi = summary["hours"]
    print(f"hours {lo}..{hi}  departed {summary['n_departed']}  "
          f"rejected {summary['n_rejected']}", file=stream)
    print(f"net cost        {t['net_cost']:12.4f} $", file=stream)
    print(f"energy cost     {t['energy_cost']:12.4f} $", file=stream)
    print(f"regulation rev. {t['revenue']:12.4f} $", file=stream)
    print(f"mean score      {t['mean_score']:12.4f}", file=stream)
    print("SoC deviation at departure:", file=stream)
    for b in summary["soc_deviation_buckets"]:
        hi_s = "inf" if b["upper_pct"] is None else f"{b['upper_pct']:g}"
        print(f"  [{b['lower_pct']:g}, {hi_s})%  {b['count']}", file=stream)


def cmd_simulate(cfg: RunConfig) -> int:
    result = simulate(cfg)
    for ev_id, why in result.rejected:
        print(f"rejected {ev_id}: {why}", file=sys.stderr)
    summary = data.write_report(result, cfg.out)
    if cfg.figures:
        render_report_figures(cfg.out)
    _print_summary(summary)
    print(f"reports written to {cfg.out}")
    return EXIT_OK


def _parse_value(param: str, text: str):
    return int(text) if param == "horizon" else float(text)


def run_sweep(cfg: RunConfig, param: str, values) -> list[dict]:
    """One simulation per value on shared inputs and seed; bad values give error rows."""
    if param not in SWEEP_PARAMS:
        raise InvalidParameterError(f"unknown sweep parameter {param!r}")
    if not values:
        raise InvalidParameterError("sweep needs at least one value")
    field_name = SWEEP_PARAMS[param]
    # Tile for the largest valid horizon so every point sees the same data.
    widest = cfg
    if param == "horizon":
        ok = []
        for v in values:
            try:
                ok.append(int(v))
            except (TypeError, ValueError):
                pass
        widest = replace(cfg, horizon=max(ok + [cfg.horizon]))
    inputs = load_inputs(widest)
    rows = []
    for raw in values:
        row = {"param": param, "value": raw, "net_cost": math.nan, "revenue": math.nan,
               "mean_score": math.nan, "cleared_mwh": math.nan, "status": "ok", "error": ""}
        try:
            value = _parse_value(param, raw) if isinstance(raw, str) else raw
            row["value"] = value
            point = replace(cfg, **{field_name: value})
            point.validate()
            tot = simulate(point, inputs).totals()
            row.update(net_cost=tot["net_cost"], revenue=tot["revenue"],
                       mean_score=tot["mean_score"], cleared_mwh=tot["cleared_mwh"])
        except (ValueError, EvmpcError) as exc:
            row.update(status="error", error=str(exc))
        rows.append(row)
    return rows


def write_sweep(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([r["param"], r["value"]]
                       + ["" if isinstance(r[k], float) and math.isnan(r[k]) else data._fmt(r[k])
                          for k in ("net_cost", "revenue", "mean_score", "cleared_mwh")]
                       + [r["status"], r["error"]])


def cmd_sweep(cfg: RunConfig, param: str, values) -> int:
    rows = run_sweep(cfg, param, values)
    out = Path(cfg.out)
    write_sweep(rows, out / f"sweep_{param}.csv")
    if cfg.figures:
        good = [r for r in rows if r["status"] == "ok"]
        plots.sweep_curves(param, [r["value"] for r in good], [r["net_cost"] for r in good],
                           [r["revenue"] for r in good], [r["mean_score"] for r in good],
                           out / f"sweep_{param}.png")
    print(f"{'value':>10} {'net_cost':>12} {'revenue':>12} {'mean_score':>10}")
    for r in rows:
        if r["status"] == "ok":
            print(f"{r['value']!s:>10} {r['net_cost']:12.4f} {r['revenue']:12.4f} "
                  f"{r['mean_score']:10.4f}")
        else:
            print(f"{r['value']!s:>10}  error: {r['error']}")
    print(f"table written to {out / f'sweep_{param}.csv'}")
    return EXIT_OK


def cmd_gen_fleet(spec_path, seed: int, out_path, scale: float = 1.0) -> int:
    spec = data.FleetSpec.load(spec_path)
    if scale != 1.0:
        spec = spec.scaled(scale)
    fleet = data.generate_fleet(spec, seed)
    data.write_fleet(fleet, out_path)
    print(f"wrote {len(fleet)} EVs to {out_path}")
    return EXIT_OK


def cmd_report(report_dir, figures: bool = True) -> int:
    report_dir = Path(report_dir)
    path = report_dir / "summary.json"
    if not path.exists():
        raise ParseError("report summary not found", path)
    try:
        summary = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if summary.get("schema_version") != data.SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {summary.get('schema_version')!r}", path)
    _print_summary(summary)
    if figures:
        for p in render_report_figures(report_dir):
            print(f"figure {p}")
    return EXIT_OK


# --- argument parsing -------------------------------------------------------

def _run_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("inputs")
    g.add_argument("--config", help="JSON config file (flags override it)")
    g.add_argument("--data-dir", dest="data_dir",
                   help=f"directory with default inputs (env ${data.DATA_DIR_ENV}, "
                        "else bundled sample data)")
    g.add_argument("--prices", help="hourly price CSV")
    g.add_argument("--regd", help="RegD trace CSV (optionally .gz)")
    g.add_argument("--fleet", help="fleet CSV (overrides --fleet-spec)")
    g.add_argument("--fleet-spec", dest="fleet_spec", help="fleet spec JSON")
    g.add_argument("--fleet-scale", dest="fleet_scale", type=float,
                   help=f"multiply spec counts (default {DEFAULT_FLEET_SCALE})")
    g = p.add_argument_group("model")
    g.add_argument("--horizon", type=int, help="prediction horizon H in hours (default 6)")
    g.add_argument("--alpha", type=float, help="CVaR confidence level (default 0.2)")
    g.add_argument("--phi", type=float, help="penalty on unmet cleared capacity (default 115)")
    g.add_argument("--phi-prime", dest="phi_prime", type=float,
                   help="penalty on next-hour capacity shortfall (default 115)")
    g.add_argument("--scenarios", type=int, help="number of scenarios (default 20)")
    g.add_argument("--rho", type=float, help="owner compensation per kW of regulation")
    g.add_argument("--eps-p", dest="eps_p", type=float, help="price error std, $/MWh")
    g.add_argument("--eps-ev", dest="eps_ev", type=float, help="EV parameter error std, %%")
    g = p.add_argument_group("run")
    g.add_argument("--seed", type=int, help="random seed (default 0)")
    g.add_argument("--out", help="output directory (default evmpc_out)")
    g.add_argument("--figures", action="store_const", const=True, default=None,
                   help="also render PNG figures")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evmpc", description="EV aggregator regulation-market MPC simulator",
        epilog="exit codes: 0 ok, 2 usage/config, 3 input data, 4 solver")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _run_options()

    sub.add_parser("simulate", parents=[common], help="run one simulation")

    sp = sub.add_parser("sweep", parents=[common], help="sweep one parameter")
    sp.add_argument("param", choices=sorted(SWEEP_PARAMS))
    sp.add_argument("values", nargs="+")

    gp = sub.add_parser("gen-fleet", help="draw a fleet file from a spec")
    gp.add_argument("--spec", help="fleet spec JSON (default: bundled reference fleet spec)")
    gp.add_argument("--data-dir", dest="data_dir")
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("--scale", type=float, default=1.0)
    gp.add_argument("--out", default="fleet.csv")

    rp = sub.add_parser("report", help="summarise a report directory")
    rp.add_argument("dir")
    rp.add_argument("--no-figures", dest="figures", action="store_false")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-fleet":
            base = Path(args.data_dir) if args.data_dir else data.data_dir()
            spec = Path(args.spec) if args.spec else base / "reference_fleet.json"
            return cmd_gen_fleet(spec, args.seed, args.out, args.scale)
        if args.command == "report":
            return cmd_report(args.dir, args.figures)
        cfg = resolve_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_sweep(cfg, args.param, args.values)
    except ParseError as exc:
        print(f"evmpc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SolverError, InfeasibleError) as exc:
        print(f"evmpc: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InvalidParameterError, ValueError) as exc:
        print(f"evmpc: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, KeyError) as exc:
        print(f"evmpc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
