"""Command-line entry point.

Subcommands: simulate, calibrate, forecast, sobol, oat, bench. Every run
writes a self-contained artifact directory (config snapshot, CSV series,
JSON summary) so results are reproducible from the snapshot alone. An
empty configuration runs the 500-agent, 100-day demo model.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import time
from datetime import date, timedelta
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import calibration as cal
from . import discrete, sensitivity
from .diffcore import RelaxConfig
from .engine import LEARNABLE_NAMES, ModelParams, run
from .errors import ConfigurationError, DataError, DiffEpiError

SCHEMA_VERSION = 1


# -- configuration -----------------------------------------------------------


@dataclasses.dataclass
class RunConfig:
    model: ModelParams
    calibration: cal.CalibrationConfig
    sensitivity_bounds: dict
    sensitivity_observable: str = "cumulative_infections"
    sensitivity_replicates: int = sensitivity.DEFAULT_REPLICATES
    sensitivity_samples: int = 64


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("inf", "+inf"):
        return math.inf
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def load_config(path: Path | None, overrides: list[str]) -> RunConfig:
    raw: dict = {}
    if path is not None:
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        version = raw.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigurationError(
                f"unsupported config schema_version {version}; expected {SCHEMA_VERSION}"
            )

    model_kw = dict(raw.get("model", {}))
    if "initial_counts" in model_kw:
        model_kw["initial_counts"] = tuple(model_kw["initial_counts"])
    relax_kw = dict(raw.get("relax", {}))
    calib_kw = dict(raw.get("calibration", {}))
    sens = dict(raw.get("sensitivity", {}))
    bounds = {k: tuple(v) for k, v in sens.pop("bounds", {}).items()}

    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        parsed = _coerce(value.strip())
        if key.startswith("model."):
            model_kw[key[6:]] = parsed
        elif key.startswith("relax."):
            relax_kw[key[6:]] = parsed
        elif key.startswith("calibration."):
            calib_kw[key[12:]] = parsed
        elif key.startswith("sensitivity."):
            sens[key[12:]] = parsed
        else:
            model_kw[key] = parsed

    try:
        relax = RelaxConfig(**relax_kw)
        mp = ModelParams(relax=relax, **model_kw)
        mp.validate()
        if "param_names" in calib_kw and isinstance(calib_kw["param_names"], str):
            calib_kw["param_names"] = [s.strip() for s in calib_kw["param_names"].split(",")]
        calib = cal.CalibrationConfig(**calib_kw)
    except TypeError as exc:
        raise ConfigurationError(f"invalid configuration field: {exc}") from exc

    return RunConfig(
        model=mp,
        calibration=calib,
        sensitivity_bounds=bounds or dict(sensitivity.DEFAULT_EPIDEMIC_BOUNDS),
        sensitivity_observable=sens.get("observable", "cumulative_infections"),
        sensitivity_replicates=int(sens.get("replicates", sensitivity.DEFAULT_REPLICATES)),
        sensitivity_samples=int(sens.get("samples", 64)),
    )


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if math.isinf(v):
            return '"inf"'
        return repr(float(v))
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigurationError(f"cannot serialise config value {v!r}")


def snapshot_config(cfg: RunConfig) -> str:
    """Serialise the effective configuration back to TOML."""
    mp = cfg.model
    lines = [f"schema_version = {SCHEMA_VERSION}", "", "[model]"]
    skip = {"relax"}
    for f in dataclasses.fields(ModelParams):
        if f.name in skip:
            continue
        value = getattr(mp, f.name)
        if f.name == "initial_counts":
            value = list(mp.counts())
        if f.name == "purchase_cap" and math.isinf(value):
            continue
        lines.append(f"{f.name} = {_toml_value(value)}")
    lines += ["", "[relax]"]
    for f in dataclasses.fields(RelaxConfig):
        lines.append(f"{f.name} = {_toml_value(getattr(mp.relax, f.name))}")
    lines += ["", "[calibration]"]
    for f in dataclasses.fields(cal.CalibrationConfig):
        value = getattr(cfg.calibration, f.name)
        if value is None:
            continue
        lines.append(f"{f.name} = {_toml_value(value)}")
    lines += ["", "[sensitivity]"]
    lines.append(f"observable = {_toml_value(cfg.sensitivity_observable)}")
    lines.append(f"replicates = {cfg.sensitivity_replicates}")
    lines.append(f"samples = {cfg.sensitivity_samples}")
    lines += ["", "[sensitivity.bounds]"]
    for name, (lo, hi) in cfg.sensitivity_bounds.items():
        lines.append(f"{name} = [{_toml_value(lo)}, {_toml_value(hi)}]")
    return "\n".join(lines) + "\n"


# -- data ingestion ----------------------------------------------------------


@dataclasses.dataclass
class EpidemicSeries:
    dates: list
    values: np.ndarray
    region: str | None = None


def ingest_csv(
    path,
    date_col: str = "date",
    value_col: str = "value",
    region: str | None = None,
    region_col: str = "region",
    forward_fill: bool = True,
    smooth: bool = False,
) -> EpidemicSeries:
    """Parse an epidemic time series from CSV.

    Dates must be ISO-8601 and strictly increasing; values nonnegative.
    Calendar gaps are forward-filled so the series is daily with no holes.
    A 7-day trailing moving average is available but off by default.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    dates: list = []
    values: list = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or date_col not in reader.fieldnames:
            raise DataError(f"missing required column {date_col!r} in {path}")
        if value_col not in reader.fieldnames:
            raise DataError(f"missing required column {value_col!r} in {path}")
        for lineno, row in enumerate(reader, start=2):
            if region is not None and row.get(region_col) != region:
                continue
            try:
                d = date.fromisoformat(row[date_col].strip())
                v = float(row[value_col])
            except (ValueError, AttributeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed row ({exc})") from exc
            if v < 0:
                raise DataError(f"{path}:{lineno}: negative value {v}")
            if dates and d <= dates[-1]:
                raise DataError(
                    f"{path}:{lineno}: dates must be strictly increasing ({d} after {dates[-1]})"
                )
            dates.append(d)
            values.append(v)
    if not dates:
        raise DataError(f"no usable rows in {path}")

    if forward_fill:
        full_dates = [dates[0]]
        full_values = [values[0]]
        for d, v in zip(dates[1:], values[1:]):
            while full_dates[-1] + timedelta(days=1) < d:
                full_dates.append(full_dates[-1] + timedelta(days=1))
                full_values.append(full_values[-1])
            full_dates.append(d)
            full_values.append(v)
        dates, values = full_dates, full_values

    values = np.asarray(values, dtype=np.float64)
    if smooth and len(values) >= 7:
        kernel = np.ones(7) / 7.0
        smoothed = np.convolve(values, kernel, mode="valid")
        values = np.concatenate([values[:6], smoothed])
    return EpidemicSeries(dates=dates, values=values, region=region)


# -- artifact writers --------------------------------------------------------


def _write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _fmt(x) -> str:
    return repr(float(x))


def _series_rows(out) -> list:
    rows = []
    for i in range(len(out.day)):
        rows.append(
            [int(out.day[i]), _fmt(out.new_infections[i]), _fmt(out.cumulative_infections[i]),
             _fmt(out.new_deaths[i]), _fmt(out.cumulative_deaths[i]), _fmt(out.critical[i])]
            + [_fmt(v) for v in out.decision_counts[i]]
            + [_fmt(v) for v in out.class_counts[i]]
        )
    return rows


_SERIES_HEADER = [
    "day", "new_infections", "cumulative_infections", "new_deaths",
    "cumulative_deaths", "critical", "dec_home", "dec_work", "dec_shop",
    "dec_hospital", "n_susceptible", "n_asymptomatic", "n_symptomatic", "n_deceased",
]


class RunDir:
    """Artifact directory for one command invocation."""

    def __init__(self, out_root: Path, command: str, seed: int, cfg: RunConfig):
        self.path = out_root / f"{command}-s{seed}"
        self.path.mkdir(parents=True, exist_ok=True)
        (self.path / "config.toml").write_text(snapshot_config(cfg), encoding="utf-8")
        self.summary = {"command": command, "seed": seed, "schema_version": SCHEMA_VERSION}

    def write_summary(self) -> None:
        with open(self.path / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(self.summary, fh, indent=2, sort_keys=True)
            fh.write("\n")


# -- commands ----------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, args) -> int:
    rundir = RunDir(args.out, "simulate", args.seed, cfg)
    out = run(cfg.model, seed=args.seed)
    _write_csv(rundir.path / "series.csv", _SERIES_HEADER, _series_rows(out))
    rundir.summary["final"] = {
        "cumulative_infections": float(out.cumulative_infections[-1]),
        "cumulative_deaths": float(out.cumulative_deaths[-1]),
    }
    rundir.write_summary()
    print(f"simulate: wrote {rundir.path}/series.csv "
          f"({cfg.model.population} agents, {cfg.model.horizon} days)")
    return 0


def _load_target(args) -> np.ndarray:
    if args.data is None:
        raise ConfigurationError("this command requires --data <csv>")
    series = ingest_csv(args.data, date_col=args.date_col, value_col=args.value_col,
                        region=args.region)
    return series.values


def cmd_calibrate(cfg: RunConfig, args) -> int:
    target = _load_target(args)
    rundir = RunDir(args.out, "calibrate", args.seed, cfg)
    ccfg = cfg.calibration
    if args.epochs is not None:
        ccfg = dataclasses.replace(ccfg, epochs=args.epochs)
    result = cal.calibrate(cfg.model, target, ccfg, seed=args.seed)
    _write_csv(
        rundir.path / "loss_trace.csv",
        ["epoch", "loss"],
        [[i, _fmt(v)] for i, v in enumerate(result.loss_trace)],
    )
    fitted = {n: getattr(result.params, n) for n in LEARNABLE_NAMES}
    with open(rundir.path / "fitted_params.json", "w", encoding="utf-8") as fh:
        json.dump(fitted, fh, indent=2, sort_keys=True)
        fh.write("\n")
    rundir.summary["best_loss"] = result.best_loss
    rundir.summary["best_epoch"] = result.best_epoch
    rundir.write_summary()
    print(f"calibrate: best loss {result.best_loss:.6g} at epoch {result.best_epoch}; "
          f"wrote {rundir.path}")
    return 0


def cmd_forecast(cfg: RunConfig, args) -> int:
    target = _load_target(args)
    horizon = args.horizon
    if horizon is None:
        raise ConfigurationError("forecast requires --horizon")
    if len(target) <= horizon:
        raise ConfigurationError("data must be longer than the forecast horizon")
    train, held_out = target[:-horizon], target[-horizon:]

    rundir = RunDir(args.out, "forecast", args.seed, cfg)
    ccfg = cfg.calibration
    if args.epochs is not None:
        ccfg = dataclasses.replace(ccfg, epochs=args.epochs)
    mp = cfg.model
    if ccfg.epochs > 0:
        result = cal.calibrate(mp, train, ccfg, seed=args.seed)
        mp = result.params
        _write_csv(
            rundir.path / "loss_trace.csv",
            ["epoch", "loss"],
            [[i, _fmt(v)] for i, v in enumerate(result.loss_trace)],
        )
    fc = cal.forecast(mp, train, horizon, seed=args.seed, observable=ccfg.observable)
    _write_csv(
        rundir.path / "forecast.csv",
        ["step", "forecast"],
        [[i + 1, _fmt(v)] for i, v in enumerate(fc.forecast_scaled)],
    )
    m = cal.metrics(held_out, fc.forecast_scaled)
    baseline = cal.metrics(held_out, cal.constant_mean_baseline(train, horizon))
    report = {"forecast": m, "constant_mean_baseline": baseline}
    with open(rundir.path / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    rundir.summary["metrics"] = report
    rundir.write_summary()
    print(f"forecast: ND={m['nd']:.4f} RMSE={m['rmse']:.4f} MAE={m['mae']:.4f} "
          f"(baseline ND={baseline['nd']:.4f}); wrote {rundir.path}")
    return 0


def cmd_sobol(cfg: RunConfig, args) -> int:
    rundir = RunDir(args.out, "sobol", args.seed, cfg)
    space = sensitivity.ParamSpace.from_dict(cfg.sensitivity_bounds)
    observable = args.observable or cfg.sensitivity_observable
    result = sensitivity.sobol_on_model(
        cfg.model, space,
        N=args.samples or cfg.sensitivity_samples,
        observable=observable,
        replicates=args.replicates or cfg.sensitivity_replicates,
        seed=args.seed,
        workers=args.workers,
    )
    _write_csv(
        rundir.path / "sobol.csv",
        ["parameter", "total_effect", "ci_low", "ci_high", "first_order"],
        [
            [r["name"], _fmt(r["total"]), _fmt(r["total_ci_low"]),
             _fmt(r["total_ci_high"]), _fmt(r["first"])]
            for r in result.as_rows()
        ],
    )
    rundir.summary["observable"] = observable
    rundir.summary["degenerate"] = result.degenerate
    rundir.summary["total_effects"] = {
        n: float(t) for n, t in zip(result.names, result.total)
    }
    rundir.write_summary()
    print(f"sobol: wrote {rundir.path}/sobol.csv (observable {observable})")
    return 0


def cmd_oat(cfg: RunConfig, args) -> int:
    if not args.parameter:
        raise ConfigurationError("oat requires --parameter")
    values = [float(v) for v in args.values.split(",")] if args.values else None
    if not values:
        raise ConfigurationError("oat requires --values v1,v2,...")
    observable = args.observable or cfg.sensitivity_observable
    rundir = RunDir(args.out, "oat", args.seed, cfg)
    result = sensitivity.oat_sweep(
        cfg.model, args.parameter, values, observable,
        replicates=args.replicates or cfg.sensitivity_replicates,
        base_seed=args.seed,
    )
    _write_csv(
        rundir.path / "oat.csv",
        ["value", "final_mean", "final_se"],
        [
            [_fmt(v), _fmt(m), _fmt(s)]
            for v, m, s in zip(result.values, result.final_mean, result.final_se)
        ],
    )
    _write_csv(
        rundir.path / "oat_series.csv",
        ["day"] + [f"value_{_fmt(v)}" for v in result.values],
        [
            [t + 1] + [_fmt(result.mean_series[vi, t]) for vi in range(len(values))]
            for t in range(result.mean_series.shape[1])
        ],
    )
    rundir.summary["parameter"] = args.parameter
    rundir.summary["final_means"] = [float(v) for v in result.final_mean]
    rundir.write_summary()
    print(f"oat: swept {args.parameter} over {values}; wrote {rundir.path}")
    return 0


def cmd_bench(cfg: RunConfig, args) -> int:
    rundir = RunDir(args.out, "bench", args.seed, cfg)
    grid = [int(p) for p in args.population_grid.split(",")]
    horizon = args.bench_horizon
    rows = []
    for P in grid:
        mp = cfg.model.with_values(population=P, initial_counts=None, horizon=horizon)
        run(mp, seed=args.seed, horizon=min(3, horizon))  # warm-up
        t0 = time.perf_counter()
        run(mp, seed=args.seed, horizon=horizon)
        elapsed = time.perf_counter() - t0
        rows.append((P, elapsed))
        print(f"bench: P={P} engine {elapsed:.3f}s")
    pops = np.array([r[0] for r in rows], dtype=float)
    times = np.array([r[1] for r in rows])
    slope, intercept = np.polyfit(pops, times, 1)
    pred = slope * pops + intercept
    ss_res = float(np.sum((times - pred) ** 2))
    ss_tot = float(np.sum((times - times.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0

    speedup = None
    if not args.skip_oracle:
        P = args.oracle_population
        mp = cfg.model.with_values(population=P, initial_counts=None, horizon=horizon)
        t0 = time.perf_counter()
        run(mp, seed=args.seed, horizon=horizon)
        engine_time = time.perf_counter() - t0
        t0 = time.perf_counter()
        discrete.run_discrete(mp, seed=args.seed, horizon=horizon)
        oracle_time = time.perf_counter() - t0
        speedup = oracle_time / engine_time
        print(f"bench: P={P} engine {engine_time:.2f}s vs discrete {oracle_time:.2f}s "
              f"-> speedup {speedup:.1f}x")

    _write_csv(
        rundir.path / "bench.csv",
        ["population", "engine_seconds"],
        [[p, _fmt(t)] for p, t in rows],
    )
    rundir.summary["fit"] = {"slope": float(slope), "intercept": float(intercept), "r_squared": r2}
    if speedup is not None:
        rundir.summary["speedup_vs_discrete"] = float(speedup)
    rundir.write_summary()
    print(f"bench: linear fit R^2={r2:.3f}; wrote {rundir.path}")
    return 0


# -- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffepi",
        description="Differentiable agent-based epidemic simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="TOML configuration file")
        p.add_argument("--data", type=Path, default=None, help="epidemic series CSV")
        p.add_argument("--out", type=Path, default=Path("out"), help="artifact directory root")
        p.add_argument("--seed", type=int, default=1)
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override any config field (repeatable)")
        p.add_argument("--date-col", default="date")
        p.add_argument("--value-col", default="value")
        p.add_argument("--region", default=None)

    p = sub.add_parser("simulate", help="run the model and write daily series")
    common(p)

    p = sub.add_parser("calibrate", help="fit learnable parameters to a series")
    common(p)
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("forecast", help="calibrate on a window, forecast past it")
    common(p)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("sobol", help="total-effect indices via Saltelli sampling")
    common(p)
    p.add_argument("--samples", type=int, default=None, help="Saltelli base N")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--observable", default=None)
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("oat", help="one-at-a-time parameter sweep")
    common(p)
    p.add_argument("--parameter", default=None)
    p.add_argument("--values", default=None, help="comma-separated values")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--observable", default=None)

    p = sub.add_parser("bench", help="runtime scaling and discrete-oracle speedup")
    common(p)
    p.add_argument("--population-grid", default="250,500,1000,2000,4000")
    p.add_argument("--bench-horizon", type=int, default=30)
    p.add_argument("--oracle-population", type=int, default=1000)
    p.add_argument("--skip-oracle", action="store_true")

    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "forecast": cmd_forecast,
    "sobol": cmd_sobol,
    "oat": cmd_oat,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        if args.data is not None and not Path(args.data).exists():
            raise DataError(f"data file not found: {args.data}")
        return _COMMANDS[args.command](cfg, args)
    except DiffEpiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
