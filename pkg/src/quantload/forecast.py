"""Residual-bootstrap simulation of joint load/temperature sample paths from
the fitted equations, and extraction of the 99 empirical quantiles per hour.

Randomness uses one counter-based (Philox) stream per sample path, keyed by
``(seed << 64) + path_index``, so ensembles are bit-reproducible and
independent of chunking or parallel generation order.
"""

import calendar as _calendar
import logging
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .design import (
    INTERCEPT,
    HourlySeries,
    ModelSpec,
    build_design,
    standardize,
)
from .lasso import DEFAULT_GRID_SIZE, DEFAULT_RATIO_FLOOR, LassoFit, fit_path_bic
from .timegrid import HOUR, HourlyGrid, _is_leap

log = logging.getLogger(__name__)

QUANTILE_LEVELS = tuple(range(1, 100))
DEFAULT_N_PATHS = 10_000


@dataclass
class EquationFit:
    """A fitted equation packaged for recursive simulation: original-scale
    coefficients over the design columns, the basis set, and residual pool."""

    target: str
    spec: ModelSpec
    columns: tuple
    basis: object | None
    beta: np.ndarray
    intercept: float
    residuals: np.ndarray
    lasso: LassoFit
    max_lag: int


def fit_equation(series: HourlySeries, spec: ModelSpec, target: str, *,
                 calendar=None, grid_size=DEFAULT_GRID_SIZE,
                 ratio_floor=DEFAULT_RATIO_FLOOR) -> EquationFit:
    """Build, standardize and BIC-tune one equation on the full series."""
    dm, y = build_design(series, spec, target, calendar=calendar)
    problem = standardize(dm, y)
    fit = fit_path_bic(problem, size=grid_size, ratio_floor=ratio_floor)
    return EquationFit(
        target=target,
        spec=spec,
        columns=dm.columns,
        basis=dm.basis,
        beta=fit.beta_orig,
        intercept=fit.intercept,
        residuals=fit.residuals,
        lasso=fit,
        max_lag=spec.max_lag(target),
    )


@dataclass
class SimulationConfig:
    """Bootstrap simulation settings: ensemble size, horizon, seed, and the
    per-equation residual pools (defaults to the in-sample residuals)."""

    horizon: int
    n_paths: int = DEFAULT_N_PATHS
    seed: int = 0
    residual_pools: dict = field(default_factory=dict)
    path_chunk: int = 2048

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.path_chunk < 1:
            raise ValueError("path_chunk must be >= 1")
        for name, pool in self.residual_pools.items():
            if np.asarray(pool).size == 0:
                raise ValueError(f"residual pool for {name!r} is empty")


class _SimEquation:
    """One equation compiled onto a forecast horizon: per-hour intercept path
    and, per source channel, lag/threshold/coefficient-path arrays."""

    def __init__(self, fit: EquationFit, horizon_grid: HourlyGrid):
        H = len(horizon_grid)
        positions = fit.basis.positions() if fit.basis is not None else {}
        B = fit.basis.evaluate(horizon_grid) if positions else None

        phi0 = np.full(H, fit.intercept)
        terms = {}
        for ci, b in zip(fit.columns, fit.beta):
            if b == 0.0:
                continue
            if ci.regressor is None:
                phi0 += b * B[:, positions[ci.basis]]
                continue
            key = (ci.regressor, ci.threshold, ci.lag)
            path = terms.get(key)
            if path is None:
                path = terms[key] = np.zeros(H)
            if ci.basis is None:
                path += b
            else:
                path += b * B[:, positions[ci.basis]]

        self.phi0 = phi0
        self.sources = {}
        for channel in ("load", "temp"):
            keys = sorted(k for k in terms if k[0] == channel)
            if keys:
                self.sources[channel] = (
                    np.array([k[2] for k in keys], dtype=np.int64),
                    np.array([k[1] for k in keys], dtype=float),
                    np.column_stack([terms[k] for k in keys]),
                )
        self.max_lag = max(
            (int(lags.max()) for lags, _, _ in self.sources.values()), default=1
        )

    def step(self, h: int, histories: dict, margin: int) -> np.ndarray:
        out = self.phi0[h]
        for channel, (lags, thr, coefs) in self.sources.items():
            vals = histories[channel][:, margin + h - lags]
            np.maximum(vals, thr, out=vals)
            vals *= coefs[h]
            # fixed-order pairwise reduction keeps paths bit-identical
            # regardless of how the ensemble is chunked
            out = out + vals.sum(axis=1)
        return out


def _path_residual_indices(seed: int, path_index: int, horizon: int, pools: dict) -> dict:
    gen = np.random.Generator(np.random.Philox(key=(int(seed) << 64) + path_index))
    out = {}
    for name in ("temp", "load"):
        if name in pools:
            out[name] = gen.integers(0, pools[name].shape[0], size=horizon)
    return out


def simulate_paths(fit_load: EquationFit, fit_temp: EquationFit | None,
                   history: HourlySeries, cfg: SimulationConfig, *,
                   return_temp: bool = False):
    """Simulate `cfg.n_paths` joint sample paths over `cfg.horizon` hours.

    Each future hour draws one residual per equation uniformly with
    replacement from its pool, advances the temperature equation first and
    then the load equation, and appends the simulated values to the path's
    history for subsequent lags.  Returns the load paths as an
    ``(n_paths, horizon)`` array (plus the temperature paths when requested).
    """
    H, P = cfg.horizon, cfg.n_paths
    horizon_grid = history.grid.after(H)
    eq_load = _SimEquation(fit_load, horizon_grid)
    eq_temp = _SimEquation(fit_temp, horizon_grid) if fit_temp is not None else None
    if eq_temp is None and "temp" in eq_load.sources:
        raise ValueError("the load equation uses temperature but no temperature fit was given")

    margin = max(eq_load.max_lag, eq_temp.max_lag if eq_temp else 1)
    if len(history) < margin:
        raise ValueError(f"history of {len(history)} hours cannot cover lag {margin}")

    tails = {}
    needed = {"load"} | set(eq_load.sources)
    if eq_temp is not None:
        needed |= {"temp"} | set(eq_temp.sources)
    for channel in needed:
        vals, present = history.channel(channel)
        if not np.all(present[-margin:]):
            raise ValueError(f"missing {channel} observations in the last {margin} hours")
        tails[channel] = vals[-margin:]

    pools = {"load": np.asarray(cfg.residual_pools.get("load", fit_load.residuals), dtype=float)}
    if eq_temp is not None:
        pools["temp"] = np.asarray(cfg.residual_pools.get("temp", fit_temp.residuals), dtype=float)

    out_load = np.empty((P, H))
    out_temp = np.empty((P, H)) if (return_temp and eq_temp is not None) else None
    for lo in range(0, P, cfg.path_chunk):
        hi = min(P, lo + cfg.path_chunk)
        pc = hi - lo
        draws = [_path_residual_indices(cfg.seed, p, H, pools) for p in range(lo, hi)]
        eps = {name: pools[name][np.array([d[name] for d in draws])] for name in pools}

        histories = {}
        for channel in needed:
            buf = np.empty((pc, margin + H))
            buf[:, :margin] = tails[channel]
            histories[channel] = buf

        for h in range(H):
            if eq_temp is not None:
                histories["temp"][:, margin + h] = eq_temp.step(h, histories, margin) + eps["temp"][:, h]
            histories["load"][:, margin + h] = eq_load.step(h, histories, margin) + eps["load"][:, h]

        out_load[lo:hi] = histories["load"][:, margin:]
        if out_temp is not None:
            out_temp[lo:hi] = histories["temp"][:, margin:]
    return (out_load, out_temp) if return_temp else out_load


# --------------------------------------------------------------------------
# Quantile extraction


@dataclass
class QuantileForecast:
    """Per-hour predictive quantiles at the given percent levels (default 1..99)."""

    start: datetime
    values: np.ndarray
    levels: tuple = QUANTILE_LEVELS

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.levels):
            raise ValueError("values must be an (horizon, n_levels) array")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("quantile values must be finite")
        if np.any(np.diff(self.values, axis=1) < 0):
            raise ValueError("quantiles must be non-decreasing in the level")

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    def grid(self) -> HourlyGrid:
        return HourlyGrid(self.start, self.horizon)

    def timestamps(self):
        return self.grid().datetimes()


def empirical_quantiles(samples: np.ndarray, levels=QUANTILE_LEVELS) -> np.ndarray:
    """Inverse-ECDF (lower order statistic) quantiles per column.

    For N samples the level-q percent quantile is the ``ceil(N*q/100)``-th
    smallest value, so an ensemble of {1..100} has median 50.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    N = samples.shape[0]
    if N == 0:
        raise ValueError("empty sample ensemble")
    srt = np.sort(samples, axis=0)
    idx = np.ceil(N * np.asarray(levels, dtype=float) / 100.0).astype(int) - 1
    return srt[np.clip(idx, 0, N - 1)].T


def quantiles_from_paths(paths: np.ndarray, start: datetime,
                         levels=QUANTILE_LEVELS) -> QuantileForecast:
    """Reduce an ``(n_paths, horizon)`` ensemble to per-hour quantiles."""
    return QuantileForecast(start=start, values=empirical_quantiles(paths, levels), levels=tuple(levels))


# --------------------------------------------------------------------------
# Rolling tasks


def task_horizon(kind: str, start: datetime, hours: int | None = None) -> int:
    """Forecast length in hours for a task starting at `start`."""
    if kind == "hours":
        if not hours or hours < 1:
            raise ValueError("task kind 'hours' needs a positive hour count")
        return int(hours)
    if start.hour or start.minute or start.second:
        raise ValueError(f"{kind} task must start at midnight, got {start}")
    if kind == "month_ahead":
        if start.day != 1:
            raise ValueError(f"month_ahead task must start on the 1st, got {start}")
        return _calendar.monthrange(start.year, start.month)[1] * 24
    if kind == "year_ahead":
        if (start.month, start.day) != (1, 1):
            raise ValueError(f"year_ahead task must start on Jan 1, got {start}")
        return (8784 if _is_leap(start.year) else 8760)
    raise ValueError(f"unknown task kind {kind!r}")


def rolling_task_forecast(series: HourlySeries, spec: ModelSpec, kind: str,
                          cutoff: datetime, *, hours: int | None = None,
                          calendar=None, n_paths=DEFAULT_N_PATHS, seed=0,
                          grid_size=DEFAULT_GRID_SIZE, path_chunk=2048,
                          return_fits=False):
    """Fit both equations on all data before `cutoff`, simulate the task
    horizon, and extract the 99 quantiles.  The simulator only ever sees the
    truncated history, so observations past the cutoff cannot leak in."""
    history = series.truncate(cutoff)
    if history.grid.end_exclusive != cutoff:
        raise ValueError(f"cutoff {cutoff} is past the end of the data "
                         f"({history.grid.end_exclusive})")
    horizon = task_horizon(kind, cutoff, hours)
    fit_load = fit_equation(history, spec, "load", calendar=calendar, grid_size=grid_size)
    fit_temp = None
    if "temp" in spec.equations():
        fit_temp = fit_equation(history, spec, "temp", calendar=calendar, grid_size=grid_size)
    cfg = SimulationConfig(horizon=horizon, n_paths=n_paths, seed=seed, path_chunk=path_chunk)
    paths = simulate_paths(fit_load, fit_temp, history, cfg)
    qf = quantiles_from_paths(paths, start=cutoff)
    if return_fits:
        return qf, {"load": fit_load, "temp": fit_temp}
    return qf


# --------------------------------------------------------------------------
# Quantile CSV interface


def write_quantile_csv(qf: QuantileForecast, path) -> None:
    """Write `timestamp,q1,...,q99` rows atomically (temp file, then rename)."""
    header = "timestamp," + ",".join(f"q{q}" for q in qf.levels)
    lines = [header]
    for ts, row in zip(qf.timestamps(), qf.values):
        lines.append(ts.isoformat() + "," + ",".join(f"{v:.6f}" for v in row))
    payload = "\n".join(lines) + "\n"
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_quantile_csv(path) -> QuantileForecast:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        levels = tuple(int(h[1:]) for h in header[1:])
        stamps, rows = [], []
        for line in fh:
            parts = line.strip().split(",")
            if not parts[0]:
                continue
            stamps.append(datetime.fromisoformat(parts[0]))
            rows.append([float(v) for v in parts[1:]])
    if not rows:
        raise ValueError(f"{path}: no forecast rows")
    grid = HourlyGrid(stamps[0], len(stamps))
    if stamps != grid.datetimes():
        raise ValueError(f"{path}: timestamps are not a gapless hourly grid")
    return QuantileForecast(start=stamps[0], values=np.array(rows), levels=levels)
