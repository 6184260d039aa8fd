"""Scenario-based multiple-linear-regression benchmarks.

Two underlying point-forecast models share one design vocabulary:

* the plain calendar/temperature model ("vanilla"): categorical month-of-year,
  day-of-week, hour-of-day effects, the day-of-week x hour-of-day interaction,
  and a cubic temperature polynomial block interacted with month and hour;
* its recency extension, which adds the same polynomial block applied to the
  J preceding daily moving-average temperatures and the K preceding hourly
  temperatures.  ``(J, K) = (0, 0)`` is exactly the plain model.

Predictive quantiles come from substituting each historical weather year into
the target span and taking per-hour empirical quantiles over the resulting
point forecasts.
"""

import logging
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .design import HourlySeries
from .evaluation import mape
from .forecast import QUANTILE_LEVELS, QuantileForecast, empirical_quantiles, task_horizon
from .timegrid import HOUR, HourlyGrid, _is_leap

log = logging.getLogger(__name__)

_POWERS = (1, 2, 3)
N_BASE_COLUMNS = 1 + 11 + 6 + 23 + 138  # intercept + MoY + DoW + HoD + DoWxHoD
N_TEMP_BLOCK = len(_POWERS) * (1 + 11 + 23)
JK_GRID = (7, 48)


def _dummies(values, levels):
    return (np.asarray(values)[:, None] == np.asarray(levels)).astype(float)


def _temp_block(out, col, tv, moy_d, hod_d):
    powers = [tv ** p for p in _POWERS]
    for pv in powers:
        out[:, col] = pv
        col += 1
    for pv in powers:
        out[:, col:col + moy_d.shape[1]] = pv[:, None] * moy_d
        col += moy_d.shape[1]
    for pv in powers:
        out[:, col:col + hod_d.shape[1]] = pv[:, None] * hod_d
        col += hod_d.shape[1]
    return col


def mlr_design(moy, dow, hod, temp, ma_temps=(), lag_temps=()) -> np.ndarray:
    """Dense benchmark design; class variables enter as categorical effects
    with the first level as reference."""
    n = np.asarray(temp).shape[0]
    p = N_BASE_COLUMNS + N_TEMP_BLOCK * (1 + len(ma_temps) + len(lag_temps))
    out = np.empty((n, p))
    out[:, 0] = 1.0
    moy_d = _dummies(moy, range(2, 13))
    dow_d = _dummies(dow, range(2, 8))
    hod_d = _dummies(hod, range(2, 25))
    col = 1
    out[:, col:col + 11] = moy_d
    col += 11
    out[:, col:col + 6] = dow_d
    col += 6
    out[:, col:col + 23] = hod_d
    col += 23
    for d in range(6):
        out[:, col:col + 23] = dow_d[:, d:d + 1] * hod_d
        col += 23
    col = _temp_block(out, col, np.asarray(temp, dtype=float), moy_d, hod_d)
    for tv in ma_temps:
        col = _temp_block(out, col, np.asarray(tv, dtype=float), moy_d, hod_d)
    for tv in lag_temps:
        col = _temp_block(out, col, np.asarray(tv, dtype=float), moy_d, hod_d)
    assert col == p
    return out


def fit_mlr(X: np.ndarray, y: np.ndarray):
    """Least-squares fit; rank deficiency resolves to the minimum-norm solution
    (null-space components zeroed), so duplicated columns cannot change
    predictions.  Returns (coef, rss)."""
    if X.shape[0] == 0:
        raise ValueError("empty training window")
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        log.info("rank-deficient benchmark design (rank %d of %d); using pseudoinverse",
                 rank, X.shape[1])
    resid = y - X @ coef
    return coef, float(resid @ resid)


# --------------------------------------------------------------------------
# Temperature recency features


def daily_moving_avg_temp(series: HourlySeries, t: int, j: int) -> float:
    """Mean temperature over the j-th preceding day block: hours t-24j .. t-24j+23."""
    if j < 1:
        raise ValueError("day index j must be >= 1")
    lo = t - 24 * j
    if lo < 0:
        raise IndexError(f"day block {j} at row {t} reaches before the grid start")
    window = slice(lo, lo + 24)
    if not np.all(series.temp_present[window]):
        raise ValueError(f"missing temperature inside day block {j} at row {t}")
    return float(np.mean(series.temp[window]))


def _ma_matrix(temp: np.ndarray, present: np.ndarray, j_list):
    """Daily moving averages for each j, with validity masks (NaN where any of
    the 24 source hours is missing or out of range)."""
    n = temp.shape[0]
    vals = np.where(present, temp, 0.0)
    csum = np.concatenate([[0.0], np.cumsum(vals)])
    ccount = np.concatenate([[0], np.cumsum(present.astype(np.int64))])
    out = []
    for j in j_list:
        col = np.full(n, np.nan)
        t = np.arange(24 * j, n)
        lo = t - 24 * j
        full = (ccount[lo + 24] - ccount[lo]) == 24
        col[t[full]] = (csum[lo + 24] - csum[lo])[full] / 24.0
        out.append(col)
    return out


def _lag_columns(temp: np.ndarray, present: np.ndarray, k_list):
    n = temp.shape[0]
    out = []
    for k in k_list:
        col = np.full(n, np.nan)
        col[k:] = np.where(present[:n - k], temp[:n - k], np.nan)
        out.append(col)
    return out


@dataclass
class MLRModel:
    """A fitted benchmark model: coefficient vector plus its (J, K) shape."""

    coef: np.ndarray
    j: int
    k: int
    rss: float
    n_rows: int
    window: tuple


def months_before(dt: datetime, months: int) -> datetime:
    """The same wall-clock instant `months` calendar months earlier."""
    total = dt.year * 12 + (dt.month - 1) - months
    return dt.replace(year=total // 12, month=total % 12 + 1)


def fit_window(series: HourlySeries, start: datetime, end: datetime,
               j: int = 0, k: int = 0) -> MLRModel:
    """Fit the benchmark model of shape (j, k) on rows in [start, end)."""
    grid = series.grid
    if start < grid.start or end > grid.end_exclusive:
        raise ValueError(f"training window [{start}, {end}) is not fully observed "
                         f"(data spans [{grid.start}, {grid.end_exclusive}))")
    i0, i1 = grid.index_of(start), grid.index_of(end - HOUR) + 1
    rows = np.arange(i0, i1)
    feats = [series.temp]
    feats += _ma_matrix(series.temp, series.temp_present, range(1, j + 1))
    feats += _lag_columns(series.temp, series.temp_present, range(1, k + 1))
    ok = series.load_present[rows] & series.temp_present[rows]
    for f in feats[1:]:
        ok &= np.isfinite(f[rows])
    rows = rows[ok]
    if rows.size == 0:
        raise ValueError("empty training window after removing missing rows")
    X = mlr_design(grid.moys[rows], grid.dows[rows], grid.hods[rows],
                   series.temp[rows], [f[rows] for f in feats[1:j + 1]],
                   [f[rows] for f in feats[j + 1:]])
    coef, rss = fit_mlr(X, series.load[rows])
    return MLRModel(coef=coef, j=j, k=k, rss=rss, n_rows=rows.size, window=(start, end))


def fit_before(series: HourlySeries, cutoff: datetime, training_months: int = 24,
               j: int = 0, k: int = 0) -> MLRModel:
    """Fit on the most recent `training_months` calendar months before `cutoff`."""
    return fit_window(series, months_before(cutoff, training_months), cutoff, j=j, k=k)


def predict(model: MLRModel, grid_like, temp: np.ndarray,
            ma_temps=(), lag_temps=()) -> np.ndarray:
    X = mlr_design(grid_like.moys, grid_like.dows, grid_like.hods,
                   temp, ma_temps, lag_temps)
    return X @ model.coef


# --------------------------------------------------------------------------
# (J, K) selection by validation-year MAPE


def select_jk(series: HourlySeries, target_year: int, *, j_max: int = JK_GRID[0],
              k_max: int = JK_GRID[1], return_errors: bool = False):
    """Search the (J, K) grid: fit on years (target-3, target-2), pick the pair
    with the lowest MAPE on year (target-1); ties break toward smaller J, then
    smaller K."""
    grid = series.grid
    train_start = datetime(target_year - 3, 1, 1)
    val_start = datetime(target_year - 1, 1, 1)
    val_end = datetime(target_year, 1, 1)
    if train_start < grid.start or val_end > grid.end_exclusive:
        raise ValueError(f"insufficient history for a (J, K) search targeting {target_year}")

    feats = [series.temp]
    feats += _ma_matrix(series.temp, series.temp_present, range(1, j_max + 1))
    feats += _lag_columns(series.temp, series.temp_present, range(1, k_max + 1))

    def usable(lo_dt, hi_dt):
        rows = np.arange(grid.index_of(lo_dt), grid.index_of(hi_dt - HOUR) + 1)
        ok = series.load_present[rows] & series.temp_present[rows]
        for f in feats[1:]:
            ok &= np.isfinite(f[rows])
        return rows[ok]

    rows_tr = usable(train_start, val_start)
    rows_va = usable(val_start, val_end)
    if rows_tr.size == 0 or rows_va.size == 0:
        raise ValueError("training or validation year has no usable rows")

    def full_design(rows):
        return mlr_design(grid.moys[rows], grid.dows[rows], grid.hods[rows],
                          series.temp[rows],
                          [f[rows] for f in feats[1:j_max + 1]],
                          [f[rows] for f in feats[j_max + 1:]])

    X_tr, X_va = full_design(rows_tr), full_design(rows_va)
    y_tr, y_va = series.load[rows_tr], series.load[rows_va]

    norms = np.sqrt(np.einsum("ij,ij->j", X_tr, X_tr))
    norms[norms == 0] = 1.0
    Xn = X_tr / norms
    G = Xn.T @ Xn
    b = Xn.T @ y_tr

    def block_idx(j, k):
        idx = list(range(N_BASE_COLUMNS + N_TEMP_BLOCK))
        for jj in range(j):
            lo = N_BASE_COLUMNS + N_TEMP_BLOCK * (1 + jj)
            idx.extend(range(lo, lo + N_TEMP_BLOCK))
        for kk in range(k):
            lo = N_BASE_COLUMNS + N_TEMP_BLOCK * (1 + j_max + kk)
            idx.extend(range(lo, lo + N_TEMP_BLOCK))
        return np.array(idx)

    best = None
    errors = {}
    for j in range(j_max + 1):
        for k in range(k_max + 1):
            idx = block_idx(j, k)
            Gs = G[np.ix_(idx, idx)]
            jitter = 1e-10 * np.trace(Gs) / idx.size
            try:
                coef_n = np.linalg.solve(Gs + jitter * np.eye(idx.size), b[idx])
            except np.linalg.LinAlgError:
                coef_n = np.linalg.lstsq(Gs, b[idx], rcond=None)[0]
            coef = coef_n / norms[idx]
            err = mape(X_va[:, idx] @ coef, y_va)
            errors[(j, k)] = err
            if best is None or err < best[0]:
                best = (err, j, k)
    _, j, k = best
    if return_errors:
        return (j, k), errors
    return (j, k)


# --------------------------------------------------------------------------
# Weather-scenario quantiles


def map_to_year(dt: datetime, year: int) -> datetime:
    """The same month-day-hour in another year; a Feb 29 borrows Feb 28 when
    the scenario year is common."""
    if dt.month == 2 and dt.day == 29 and not _is_leap(year):
        return dt.replace(year=year, day=28)
    return dt.replace(year=year)


def _scenario_temps(series: HourlySeries, span: HourlyGrid, margin: int, year: int) -> np.ndarray:
    """Temperatures for the span (plus a lag margin) taken from the given
    weather year, aligned by month-day-hour; hours mapping outside the data are
    clamped to the nearest available hour."""
    grid = series.grid
    out = np.empty(margin + len(span))
    n = len(grid)
    clamped = missing = 0
    for i in range(out.shape[0]):
        dt = span.start + (i - margin) * HOUR
        src = map_to_year(dt, year)
        delta = src - grid.start
        idx = delta.days * 24 + delta.seconds // 3600
        if idx < 0 or idx >= n:
            idx = min(max(idx, 0), n - 1)
            clamped += 1
        if not series.temp_present[idx]:
            missing += 1
            step = 1 if idx < n // 2 else -1
            while not series.temp_present[idx]:
                idx += step
        out[i] = series.temp[idx]
    if clamped:
        log.info("weather year %d: clamped %d margin hour(s) outside the data", year, clamped)
    if missing:
        log.info("weather year %d: substituted %d missing temperature hour(s)", year, missing)
    return out


def complete_weather_years(series: HourlySeries, before: datetime) -> list:
    """Calendar years strictly before `before` whose temperatures are fully
    present in the series."""
    years = []
    grid = series.grid
    for year in range(grid.start.year, before.year + 1):
        y0, y1 = datetime(year, 1, 1), datetime(year + 1, 1, 1)
        if y0 < grid.start or y1 > grid.end_exclusive or y1 > before:
            continue
        i0, i1 = grid.index_of(y0), grid.index_of(y1 - HOUR) + 1
        if np.all(series.temp_present[i0:i1]):
            years.append(year)
    return years


def scenario_quantiles(model: MLRModel, series: HourlySeries, span: HourlyGrid,
                       weather_years, levels=QUANTILE_LEVELS) -> QuantileForecast:
    """One point forecast of the span per historical weather year, reduced to
    per-hour empirical quantiles.  Scenario substitution touches only the
    temperature block; the calendar regressors come from the target span."""
    weather_years = list(weather_years)
    if not weather_years:
        raise ValueError("no weather years to build scenarios from")
    margin = max(24 * model.j, model.k)
    preds = []
    for year in weather_years:
        temps = _scenario_temps(series, span, margin, year)
        present = np.ones_like(temps, dtype=bool)
        mas = [c[margin:] for c in _ma_matrix(temps, present, range(1, model.j + 1))]
        lags = [c[margin:] for c in _lag_columns(temps, present, range(1, model.k + 1))]
        preds.append(predict(model, span, temps[margin:], mas, lags))
    values = empirical_quantiles(np.stack(preds), levels)
    return QuantileForecast(start=span.start, values=values, levels=tuple(levels))


def benchmark_task_forecast(series: HourlySeries, kind: str, cutoff: datetime, *,
                            model_kind: str = "vanilla", training_months: int = 24,
                            jk=None, hours: int | None = None,
                            weather_years=None, levels=QUANTILE_LEVELS) -> QuantileForecast:
    """End-to-end benchmark task: fit on the trailing window before `cutoff`,
    then scenario-substitute historical weather years over the task span."""
    history = series.truncate(cutoff)
    horizon = task_horizon(kind, cutoff, hours)
    if model_kind in ("vanilla", "vanilla-5y"):
        j = k = 0
        if model_kind == "vanilla-5y":
            training_months = 60
    elif model_kind == "recency":
        if jk is None:
            jk = select_jk(history, cutoff.year)
        j, k = jk
    else:
        raise ValueError(f"unknown benchmark model {model_kind!r}")
    model = fit_before(history, cutoff, training_months, j=j, k=k)
    span = history.grid.after(horizon)
    if weather_years is None:
        weather_years = complete_weather_years(history, cutoff)
    return scenario_quantiles(model, history, span, weather_years, levels)
