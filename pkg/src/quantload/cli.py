"""Command-line entry point: CSV ingestion, station aggregation, rolling-task
orchestration, and artifact persistence.

Subcommands: ``fit``, ``forecast``, ``evaluate``, ``run``, ``rank-stations``.
Exit codes: 0 success, 1 validation error, 2 runtime failure.

All randomness flows from the single run seed: task ``i`` simulates with seed
``seed * 1_000_003 + i``, and inside a simulation path ``p`` uses the Philox
counter-based stream keyed by ``(task_seed << 64) + p``.
"""

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from . import benchmark as benchmark_mod
from . import forecast as forecast_mod
from .design import HourlySeries, ModelSpec, default_spec
from .evaluation import ScoreEntry, ScoreReport, pinball_detail, score_table, scores_csv
from .forecast import read_quantile_csv, rolling_task_forecast, write_quantile_csv
from .lasso import fit_report
from .timegrid import HOUR, HourlyGrid, read_holiday_file

log = logging.getLogger(__name__)

LASSO = "lasso"
BENCHMARKS = ("vanilla", "recency", "vanilla-5y")
MODELS = (LASSO,) + BENCHMARKS


class ValidationError(ValueError):
    """Raised for bad inputs or configuration; maps to exit code 1."""


def _atomic_write_text(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# CSV ingestion


@dataclass
class StationTable:
    """Raw ingested table: hourly grid, load, and one column per station."""

    grid: HourlyGrid
    load: np.ndarray
    load_present: np.ndarray
    temps: np.ndarray          # (n, n_stations)
    temps_present: np.ndarray
    station_names: tuple


def load_csv(path) -> StationTable:
    """Read `timestamp,load,temp1[,temp2,...]` with ISO timestamps into a
    validated regular hourly grid.  Empty fields are missing values; a missing
    hour, a duplicate, or a non-monotone timestamp is a hard error with the
    offending line number."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "timestamp" or header[1] != "load":
            raise ValidationError(
                f"{path}:1: header must be 'timestamp,load,temp1[,temp2,...]', got {header!r}"
            )
        station_names = tuple(header[2:])
        stamps, loads, temps = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ValidationError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                ts = datetime.fromisoformat(row[0])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: bad timestamp {row[0]!r}: {exc}") from exc
            if ts.minute or ts.second or ts.microsecond:
                raise ValidationError(f"{path}:{lineno}: timestamp {row[0]} is not a whole hour")
            if stamps:
                expected = stamps[-1] + HOUR
                if ts == stamps[-1]:
                    raise ValidationError(f"{path}:{lineno}: duplicate timestamp {row[0]}")
                if ts < stamps[-1]:
                    raise ValidationError(f"{path}:{lineno}: non-monotone timestamp {row[0]}")
                if ts != expected:
                    raise ValidationError(
                        f"{path}:{lineno}: gap in the hourly grid: expected {expected.isoformat()}, "
                        f"got {row[0]}"
                    )
            stamps.append(ts)
            try:
                loads.append(float(row[1]) if row[1].strip() else np.nan)
                temps.append([float(v) if v.strip() else np.nan for v in row[2:]])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: bad numeric field: {exc}") from exc
    if not stamps:
        raise ValidationError(f"{path}: no data rows")
    load = np.array(loads)
    tmat = np.array(temps)
    return StationTable(
        grid=HourlyGrid(stamps[0], len(stamps)),
        load=load,
        load_present=np.isfinite(load),
        temps=tmat,
        temps_present=np.isfinite(tmat),
        station_names=station_names,
    )


def parse_station_rule(rule: str, n_stations: int) -> list:
    """``avg:all`` or ``avg:i[,j,...]`` with 1-based station indices."""
    if not rule.startswith("avg:"):
        raise ValidationError(f"bad station rule {rule!r}; expected 'avg:all' or 'avg:3,9'")
    body = rule[4:]
    if body == "all":
        return list(range(n_stations))
    try:
        idx = [int(tok) - 1 for tok in body.split(",")]
    except ValueError as exc:
        raise ValidationError(f"bad station rule {rule!r}: {exc}") from exc
    for i in idx:
        if not 0 <= i < n_stations:
            raise ValidationError(
                f"station {i + 1} out of range; file has {n_stations} station column(s)"
            )
    return idx


def apply_station_rule(table: StationTable, rule: str) -> HourlySeries:
    """Average the selected stations into the virtual temperature series.

    An hour's virtual temperature is present only when every selected station
    is present there."""
    idx = parse_station_rule(rule, table.temps.shape[1])
    present = np.all(table.temps_present[:, idx], axis=1)
    virtual = np.where(present, np.nanmean(np.where(
        table.temps_present[:, idx], table.temps[:, idx], np.nan), axis=1), np.nan)
    return HourlySeries(grid=table.grid, load=table.load, temp=virtual,
                        load_present=table.load_present, temp_present=present)


def ingest(path, rule: str = "avg:all") -> HourlySeries:
    return apply_station_rule(load_csv(path), rule)


# --------------------------------------------------------------------------
# Station ranking


@dataclass
class StationRanking:
    ranking: list          # [(station_name, rss)] ascending
    best_pair: tuple       # ((name_a, name_b), rss)


def _cubic_rss(load, temp) -> float:
    X = np.column_stack([np.ones_like(temp), temp, temp**2, temp**3])
    coef, _, _, _ = np.linalg.lstsq(X, load, rcond=None)
    resid = load - X @ coef
    return float(resid @ resid)


def station_rank(table: StationTable) -> StationRanking:
    """Stations ordered by in-sample RSS of a cubic regression of load on
    temperature, plus the best two-station average."""
    if table.temps.shape[1] == 0:
        raise ValidationError("no station columns to rank")
    scores = []
    for s in range(table.temps.shape[1]):
        ok = table.load_present & table.temps_present[:, s]
        if not np.any(ok):
            scores.append(np.inf)
            continue
        scores.append(_cubic_rss(table.load[ok], table.temps[ok, s]))
    order = np.argsort(scores, kind="stable")
    ranking = [(table.station_names[s], float(scores[s])) for s in order]

    best_pair = None
    for a in range(table.temps.shape[1]):
        for b in range(a + 1, table.temps.shape[1]):
            ok = table.load_present & table.temps_present[:, a] & table.temps_present[:, b]
            if not np.any(ok):
                continue
            rss = _cubic_rss(table.load[ok], (table.temps[ok, a] + table.temps[ok, b]) / 2.0)
            if best_pair is None or rss < best_pair[1]:
                best_pair = ((table.station_names[a], table.station_names[b]), rss)
    return StationRanking(ranking=ranking, best_pair=best_pair)


# --------------------------------------------------------------------------
# Run configuration


@dataclass
class RunConfig:
    """A full experiment: data, model, task schedule, seeds, output directory."""

    data: str
    out: str
    model: str = LASSO
    stations: str = "avg:all"
    benchmark_stations: str = "avg:all"
    dataset: str | None = None
    spec_file: str | None = None
    holidays: str | None = None
    tasks: list = field(default_factory=list)
    seed: int = 0
    paths: int = forecast_mod.DEFAULT_N_PATHS
    training_months: int = 24
    jk: tuple | None = None
    grid_size: int = 100

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"{path}: unknown config keys {sorted(unknown)}")
        cfg = cls(**{k: v for k, v in raw.items()})
        cfg.validate(base_dir=os.path.dirname(os.path.abspath(path)))
        return cfg

    def validate(self, base_dir="."):
        def resolve(p):
            return p if os.path.isabs(p) else os.path.join(base_dir, p)

        if self.model not in MODELS:
            raise ValidationError(f"unknown model {self.model!r}; choose from {MODELS}")
        self.data = resolve(self.data)
        if not os.path.exists(self.data):
            raise ValidationError(f"data file {self.data} does not exist")
        for attr in ("spec_file", "holidays"):
            val = getattr(self, attr)
            if val is not None:
                setattr(self, attr, resolve(val))
                if not os.path.exists(getattr(self, attr)):
                    raise ValidationError(f"{attr} {getattr(self, attr)} does not exist")
        self.out = resolve(self.out)
        if not self.tasks:
            raise ValidationError("config declares no tasks")
        parsed = []
        for i, t in enumerate(self.tasks):
            try:
                kind = t["kind"]
                start = datetime.fromisoformat(t["start"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"task {i}: needs 'kind' and ISO 'start': {exc}") from exc
            hours = t.get("hours")
            try:
                horizon = forecast_mod.task_horizon(kind, start, hours)
            except ValueError as exc:
                raise ValidationError(f"task {i}: {exc}") from exc
            parsed.append({"kind": kind, "start": start, "hours": hours, "horizon": horizon})
        starts = [t["start"] for t in parsed]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValidationError("task cutoffs must be strictly increasing")
        self.tasks = parsed
        if self.paths < 1:
            raise ValidationError("paths must be >= 1")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        if self.jk is not None:
            self.jk = (int(self.jk[0]), int(self.jk[1]))


def task_seed(seed: int, task_index: int) -> int:
    return seed * 1_000_003 + task_index


def _task_name(task, model) -> str:
    return f"{task['start']:%Y-%m-%dT%H}_{model}"


def run_tasks(config: RunConfig):
    """Run every configured task: fit, forecast, persist quantiles, score when
    actuals are available.  Per-task failures are reported but do not abort
    the remaining tasks.  Returns (ScoreReport, failures)."""
    os.makedirs(config.out, exist_ok=True)
    table = load_csv(config.data)
    series = apply_station_rule(table, config.stations)
    bench_series = (series if config.benchmark_stations == config.stations
                    else apply_station_rule(table, config.benchmark_stations))
    calendar = read_holiday_file(config.holidays) if config.holidays else None
    if config.spec_file:
        with open(config.spec_file, encoding="utf-8") as fh:
            spec = ModelSpec.from_json_dict(json.load(fh))
    else:
        spec = default_spec(config.dataset or "gefcom_l")

    entries, failures = [], []
    for i, task in enumerate(config.tasks):
        name = _task_name(task, config.model)
        try:
            if config.model == LASSO:
                qf = rolling_task_forecast(
                    series, spec, task["kind"], task["start"], hours=task["hours"],
                    calendar=calendar, n_paths=config.paths,
                    seed=task_seed(config.seed, i), grid_size=config.grid_size,
                )
            else:
                qf = benchmark_mod.benchmark_task_forecast(
                    bench_series, task["kind"], task["start"],
                    model_kind=config.model, training_months=config.training_months,
                    jk=config.jk, hours=task["hours"],
                )
            out_path = os.path.join(config.out, f"quantiles_{name}.csv")
            write_quantile_csv(qf, out_path)
            entry = _score_against_actuals(qf, series, name, config.model)
            if entry is not None:
                entries.append(entry)
        except Exception as exc:  # isolate per-task failures
            log.error("task %s failed: %s", name, exc)
            failures.append((name, f"{type(exc).__name__}: {exc}"))
    report = ScoreReport(entries=entries)
    if entries:
        _atomic_write_text(os.path.join(config.out, "scores.csv"), scores_csv(report))
        _atomic_write_text(os.path.join(config.out, "scores.txt"), score_table(report) + "\n")
    return report, failures


def _score_against_actuals(qf, series: HourlySeries, name, model) -> ScoreEntry | None:
    grid = series.grid
    if qf.start < grid.start or qf.start >= grid.end_exclusive:
        return None
    i0 = grid.index_of(qf.start)
    n_avail = min(qf.horizon, len(grid) - i0)
    if n_avail <= 0:
        return None
    actual = series.load[i0:i0 + n_avail]
    present = series.load_present[i0:i0 + n_avail]
    if not np.any(present & np.isfinite(actual)):
        return None
    score, hours, skipped = pinball_detail(qf.values[:n_avail], actual, present, qf.levels)
    skipped += qf.horizon - n_avail
    return ScoreEntry(task=name.rsplit("_", 1)[0], model=model, pinball=score,
                      hours=hours, skipped=skipped)


# --------------------------------------------------------------------------
# Argument parsing and subcommands


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="quantload",
                     description="Probabilistic hourly load forecasting over CSV data.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data(p):
        p.add_argument("--data", required=True, help="hourly CSV: timestamp,load,temp1[,...]")
        p.add_argument("--stations", default="avg:all", help="station rule, e.g. avg:3,9")

    p_fit = sub.add_parser("fit", help="fit the sparse model and write a fit report")
    add_data(p_fit)
    p_fit.add_argument("--dataset", choices=("gefcom_l", "gefcom_e"), default="gefcom_l")
    p_fit.add_argument("--spec", help="model-spec JSON overriding the dataset default")
    p_fit.add_argument("--holidays", help="holiday calendar file")
    p_fit.add_argument("--cutoff", help="fit on data strictly before this ISO hour")
    p_fit.add_argument("--target", choices=("load", "temp", "both"), default="both")
    p_fit.add_argument("--grid-size", type=int, default=100)
    p_fit.add_argument("--out", required=True, help="fit report JSON path")

    p_fc = sub.add_parser("forecast", help="fit and forecast one task")
    add_data(p_fc)
    p_fc.add_argument("--dataset", choices=("gefcom_l", "gefcom_e"), default="gefcom_l")
    p_fc.add_argument("--spec", help="model-spec JSON overriding the dataset default")
    p_fc.add_argument("--holidays", help="holiday calendar file")
    p_fc.add_argument("--model", choices=MODELS, default=LASSO)
    p_fc.add_argument("--cutoff", required=True, help="ISO hour where the forecast starts")
    p_fc.add_argument("--kind", choices=("month_ahead", "year_ahead", "hours"),
                      default="month_ahead")
    p_fc.add_argument("--hours", type=int, help="horizon for --kind hours")
    p_fc.add_argument("--seed", type=int, default=0)
    p_fc.add_argument("--paths", type=int, default=forecast_mod.DEFAULT_N_PATHS)
    p_fc.add_argument("--grid-size", type=int, default=100)
    p_fc.add_argument("--training-months", type=int, default=24)
    p_fc.add_argument("--out", required=True, help="quantile CSV path")

    p_ev = sub.add_parser("evaluate", help="pinball-score a quantile CSV against actuals")
    add_data(p_ev)
    p_ev.add_argument("--forecast", required=True, help="quantile CSV to score")
    p_ev.add_argument("--out", help="optional scores CSV path")

    p_run = sub.add_parser("run", help="run a full experiment from a config file")
    p_run.add_argument("--config", required=True, help="run configuration JSON")

    p_rank = sub.add_parser("rank-stations", help="rank stations by cubic-fit RSS")
    p_rank.add_argument("--data", required=True)
    return parser


def _cmd_fit(args) -> int:
    series = ingest(args.data, args.stations)
    if args.cutoff:
        series = series.truncate(datetime.fromisoformat(args.cutoff))
    spec = _load_spec(args)
    calendar = read_holiday_file(args.holidays) if args.holidays else None
    targets = ("load", "temp") if args.target == "both" else (args.target,)
    reports = {}
    for target in targets:
        fit = forecast_mod.fit_equation(series, spec, target, calendar=calendar,
                                        grid_size=args.grid_size)
        dm_like = type("X", (), {"target": target, "columns": fit.columns})
        reports[target] = fit_report(fit.lasso, dm_like)
        print(f"{target}: lambda={fit.lasso.lambda_chosen:.6g} "
              f"nonzero={fit.lasso.nonzero} of {fit.lasso.p}")
    _atomic_write_text(args.out, json.dumps(reports, indent=2) + "\n")
    return 0


def _load_spec(args) -> ModelSpec:
    if getattr(args, "spec", None):
        with open(args.spec, encoding="utf-8") as fh:
            return ModelSpec.from_json_dict(json.load(fh))
    return default_spec(args.dataset)


def _cmd_forecast(args) -> int:
    series = ingest(args.data, args.stations)
    cutoff = datetime.fromisoformat(args.cutoff)
    calendar = read_holiday_file(args.holidays) if args.holidays else None
    if args.model == LASSO:
        spec = _load_spec(args)
        qf = rolling_task_forecast(series, spec, args.kind, cutoff, hours=args.hours,
                                   calendar=calendar, n_paths=args.paths, seed=args.seed,
                                   grid_size=args.grid_size)
    else:
        qf = benchmark_mod.benchmark_task_forecast(
            series, args.kind, cutoff, model_kind=args.model,
            training_months=args.training_months, hours=args.hours)
    write_quantile_csv(qf, args.out)
    print(f"wrote {qf.horizon} forecast hours to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    series = ingest(args.data, args.stations)
    qf = read_quantile_csv(args.forecast)
    entry = _score_against_actuals(qf, series, f"{qf.start:%Y-%m-%dT%H}_file", "file")
    if entry is None:
        raise ValidationError("forecast span has no overlap with observed actuals")
    report = ScoreReport(entries=[entry])
    print(score_table(report))
    if args.out:
        _atomic_write_text(args.out, scores_csv(report))
    return 0


def _cmd_run(args) -> int:
    config = RunConfig.from_file(args.config)
    report, failures = run_tasks(config)
    if report.entries:
        print(score_table(report))
    for name, msg in failures:
        print(f"FAILED {name}: {msg}", file=sys.stderr)
    return 2 if failures else 0


def _cmd_rank_stations(args) -> int:
    result = station_rank(load_csv(args.data))
    for name, rss in result.ranking:
        print(f"{name}: rss={rss:.6g}")
    if result.best_pair is not None:
        (a, b), rss = result.best_pair
        print(f"best pair: avg({a},{b}) rss={rss:.6g}")
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "forecast": _cmd_forecast,
    "evaluate": _cmd_evaluate,
    "run": _cmd_run,
    "rank-stations": _cmd_rank_stations,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
