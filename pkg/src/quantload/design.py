"""Assembly of the regression problem: threshold-transformed lagged regressors,
time-varying-coefficient expansion, and column standardization with full
per-column provenance."""

import logging
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from . import basis as basis_mod
from .basis import BasisInfo, BasisSet
from .timegrid import (
    HolidayCalendar,
    HourlyGrid,
    effective_coefficients,
    us_federal_calendar,
    weekly_mean_profile,
)

log = logging.getLogger(__name__)

TARGETS = ("load", "temp")
NEG_INF = float("-inf")
INTERCEPT = "intercept"

_ZERO_SD_RTOL = 1e-10


@dataclass
class HourlySeries:
    """Aligned hourly load and temperature observations on a regular grid.

    Missing observations are flagged in the per-channel presence masks; entries
    under the mask may be NaN.
    """

    grid: HourlyGrid
    load: np.ndarray
    temp: np.ndarray
    load_present: np.ndarray = None
    temp_present: np.ndarray = None

    def __post_init__(self):
        self.load = np.asarray(self.load, dtype=float)
        self.temp = np.asarray(self.temp, dtype=float)
        if self.load_present is None:
            self.load_present = np.isfinite(self.load)
        if self.temp_present is None:
            self.temp_present = np.isfinite(self.temp)
        self.load_present = np.asarray(self.load_present, dtype=bool)
        self.temp_present = np.asarray(self.temp_present, dtype=bool)
        n = len(self.grid)
        for name in ("load", "temp", "load_present", "temp_present"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} length does not match the {n}-hour grid")
        for vals, present, name in ((self.load, self.load_present, "load"),
                                    (self.temp, self.temp_present, "temp")):
            if not np.all(np.isfinite(vals[present])):
                raise ValueError(f"non-finite {name} values marked present")

    def __len__(self):
        return len(self.grid)

    def channel(self, name: str):
        if name == "load":
            return self.load, self.load_present
        if name == "temp":
            return self.temp, self.temp_present
        raise KeyError(f"unknown channel {name!r}")

    def truncate(self, cutoff: datetime) -> "HourlySeries":
        """The sub-series strictly before `cutoff`."""
        delta = cutoff - self.grid.start
        n_keep = delta.days * 24 + delta.seconds // 3600
        if delta.seconds % 3600 or delta.microseconds:
            raise ValueError(f"cutoff {cutoff} is not aligned to a whole hour")
        n_keep = max(0, min(len(self.grid), n_keep))
        if n_keep == 0:
            raise ValueError(f"cutoff {cutoff} leaves no history")
        return HourlySeries(
            grid=HourlyGrid(self.grid.start, n_keep),
            load=self.load[:n_keep],
            temp=self.temp[:n_keep],
            load_present=self.load_present[:n_keep],
            temp_present=self.temp_present[:n_keep],
        )


# --------------------------------------------------------------------------
# Model specification


def _threshold_token(c: float) -> str:
    if c == NEG_INF:
        return "-inf"
    return repr(int(c)) if float(c).is_integer() else repr(float(c))


def _lags_token(lags) -> object:
    lags = list(lags)
    if lags == list(range(lags[0], lags[-1] + 1)) and len(lags) > 2:
        return f"{lags[0]}..{lags[-1]}"
    return lags


def _parse_lags(token) -> tuple:
    if isinstance(token, str):
        lo, hi = token.split("..")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(k) for k in token)


@dataclass
class ModelSpec:
    """Thresholds, lag sets and time-varying-coefficient flags for both equations.

    * ``thresholds``: (target, regressor) -> sorted thresholds, -inf first.
    * ``lags``: (target, regressor, threshold) -> strictly positive lag tuple.
    * ``time_varying``: target -> keys, each ``"intercept"`` or a
      (regressor, threshold, lag) triple whose coefficient gets a basis expansion.
    * ``basis_groups``: target -> basis group names used for that equation.
    """

    thresholds: dict
    lags: dict
    time_varying: dict = field(default_factory=dict)
    basis_groups: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        for (tgt, reg), cs in self.thresholds.items():
            if tgt not in TARGETS or reg not in TARGETS:
                raise ValueError(f"unknown target/regressor pair ({tgt}, {reg})")
            if list(cs) != sorted(cs):
                raise ValueError(f"thresholds for ({tgt}, {reg}) must be sorted")
        if ("temp", "load") in self.thresholds and any(
            self.lags.get(("temp", "load", c)) for c in self.thresholds[("temp", "load")]
        ):
            raise ValueError("the temperature equation must not regress on load")
        for (tgt, reg, c), ks in self.lags.items():
            cs = self.thresholds.get((tgt, reg), ())
            if c not in cs:
                raise ValueError(f"lag set for unknown threshold {c} of ({tgt}, {reg})")
            if any(k < 1 for k in ks):
                raise ValueError(f"lags must be >= 1 for ({tgt}, {reg}, {c})")
            if ks and NEG_INF not in cs:
                raise ValueError(f"({tgt}, {reg}) has lags but no -inf threshold")
        for tgt, keys in self.time_varying.items():
            for key in keys:
                if key == INTERCEPT:
                    continue
                reg, c, k = key
                if k not in self.lags.get((tgt, reg, c), ()):
                    raise ValueError(f"time-varying key {key} not among the lags of {tgt}")

    def equations(self) -> tuple:
        return tuple(t for t in TARGETS if any(tgt == t for tgt, _ in self.thresholds))

    def regressor_pairs(self, target: str):
        """(regressor, threshold) pairs of one equation in canonical order."""
        for reg in TARGETS:
            for c in self.thresholds.get((target, reg), ()):
                if self.lags.get((target, reg, c)):
                    yield reg, c

    def max_lag(self, target: str) -> int:
        lags = [max(ks) for (tgt, _, _), ks in self.lags.items() if tgt == target and ks]
        if not lags:
            raise ValueError(f"no lag sets for target {target!r}")
        return max(lags)

    def groups_for(self, target: str) -> tuple:
        if target in self.basis_groups:
            return tuple(self.basis_groups[target])
        return basis_mod.LOAD_GROUPS if target == "load" else basis_mod.TEMP_GROUPS

    def to_json_dict(self) -> dict:
        return {
            "thresholds": {f"{t}.{r}": [_threshold_token(c) for c in cs]
                           for (t, r), cs in self.thresholds.items()},
            "lags": {f"{t}.{r}.{_threshold_token(c)}": _lags_token(ks)
                     for (t, r, c), ks in self.lags.items()},
            "time_varying": {
                t: [k if k == INTERCEPT else f"{k[0]}.{_threshold_token(k[1])}.{k[2]}"
                    for k in keys]
                for t, keys in self.time_varying.items()
            },
            "basis_groups": {t: list(gs) for t, gs in self.basis_groups.items()},
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelSpec":
        thresholds = {tuple(key.split(".")): tuple(float(c) for c in cs)
                      for key, cs in d["thresholds"].items()}
        lags = {}
        for key, token in d["lags"].items():
            t, r, c = key.split(".")
            lags[(t, r, float(c))] = _parse_lags(token)
        time_varying = {}
        for t, keys in d.get("time_varying", {}).items():
            parsed = []
            for k in keys:
                if k == INTERCEPT:
                    parsed.append(INTERCEPT)
                else:
                    reg, c, lag = k.split(".")
                    parsed.append((reg, float(c), int(lag)))
            time_varying[t] = tuple(parsed)
        basis_groups = {t: tuple(gs) for t, gs in d.get("basis_groups", {}).items()}
        return cls(thresholds=thresholds, lags=lags, time_varying=time_varying,
                   basis_groups=basis_groups)


_DEFAULT_THRESHOLDS = {
    "gefcom_l": {
        ("load", "load"): (NEG_INF, 100, 125, 150, 175, 200, 225),
        ("load", "temp"): (NEG_INF, 20, 30, 40, 45, 50, 55, 60, 65, 70, 80),
        ("temp", "temp"): (NEG_INF,),
    },
    "gefcom_e": {
        ("load", "load"): (NEG_INF, 2500, 3000, 3500, 4000, 4500),
        ("load", "temp"): (NEG_INF, 10, 20, 30, 40, 45, 50, 60, 70, 80),
        ("temp", "temp"): (NEG_INF,),
    },
}


def default_spec(dataset: str) -> ModelSpec:
    """The published threshold/lag configuration for either competition dataset.

    Load-on-load linear lags run to 1200 hours, temperature-on-temperature to
    360, every other lag set to 200.  Both intercepts, load lags 1/2/24/25 and
    temperature lags 1/2 (all at the -inf threshold) vary over time.
    """
    if dataset not in _DEFAULT_THRESHOLDS:
        raise ValueError(f"unknown dataset {dataset!r}; expected gefcom_l or gefcom_e")
    thresholds = dict(_DEFAULT_THRESHOLDS[dataset])
    lags = {}
    for (tgt, reg), cs in thresholds.items():
        for c in cs:
            if tgt == "load" and reg == "load":
                hi = 1200 if c == NEG_INF else 200
            elif tgt == "load":
                hi = 200
            else:
                hi = 360
            lags[(tgt, reg, c)] = tuple(range(1, hi + 1))
    time_varying = {
        "load": (INTERCEPT,) + tuple(("load", NEG_INF, k) for k in (1, 2, 24, 25)),
        "temp": (INTERCEPT,) + tuple(("temp", NEG_INF, k) for k in (1, 2)),
    }
    return ModelSpec(thresholds=thresholds, lags=lags, time_varying=time_varying)


# --------------------------------------------------------------------------
# Design matrix


@dataclass(frozen=True)
class ColumnInfo:
    """Provenance of one design column.

    ``regressor is None`` marks the intercept's basis expansion; ``basis is
    None`` marks the constant part of a coefficient.
    """

    target: str
    regressor: str | None
    threshold: float | None
    lag: int | None
    basis: BasisInfo | None = None

    def label(self) -> str:
        if self.regressor is None:
            return f"{self.target}:intercept~{self.basis}"
        core = f"{self.target}<-{self.regressor}@{_threshold_token(self.threshold)}#{self.lag}"
        return f"{core}~{self.basis}" if self.basis is not None else core


def threshold_regressor(values, present, c: float, k: int, t: int) -> float:
    """The regressor max(values[t-k], c); raises if the lagged value is missing."""
    if t - k < 0:
        raise IndexError(f"lag {k} at row {t} reaches before the grid start")
    if not present[t - k]:
        raise ValueError(f"missing observation at grid index {t - k}")
    return max(float(values[t - k]), c)


class DesignMatrix:
    """Dense regressor matrix with per-column provenance.

    ``center`` and ``scale`` are populated by :func:`standardize`.
    """

    def __init__(self, X, rows, columns, target, grid):
        self.X = X
        self.rows = rows
        self.columns = tuple(columns)
        self.target = target
        self.grid = grid
        self.basis: BasisSet | None = None
        self.center = None
        self.scale = None

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


class _RowView:
    """Calendar covariates restricted to a sorted subset of grid rows."""

    def __init__(self, grid: HourlyGrid, rows: np.ndarray):
        self.abshours = grid.abshours[rows]
        self.hods = grid.hods[rows]
        self.hows = grid.hows[rows]
        self.doys = grid.doys[rows]
        self.start_dt = grid.datetime_of(int(rows[0]))
        self.end_dt = grid.datetime_of(int(rows[-1]))


def prepare_calendar(series: HourlySeries, groups, calendar=None) -> HolidayCalendar | None:
    """Resolve the holiday calendar for a basis-group selection, computing the
    effective coefficients from the series when fixed-date holidays are used."""
    needs_holidays = bool({basis_mod.GROUP_FIXED_HOL, basis_mod.GROUP_FLEX_HOL} & set(groups))
    if not needs_holidays:
        return calendar
    if calendar is None:
        calendar = us_federal_calendar()
    if basis_mod.GROUP_FIXED_HOL in groups and calendar.effective_coeffs is None:
        profile = weekly_mean_profile(series.load, series.load_present, series.grid, calendar)
        calendar = calendar.with_effective_coeffs(effective_coefficients(profile))
    return calendar


def build_design(series: HourlySeries, spec: ModelSpec, target: str, *,
                 calendar=None, basis: BasisSet | None = None):
    """Build the dense regression problem for one equation.

    Returns ``(dm, y)`` where `dm` is the :class:`DesignMatrix` (with the basis
    set used attached as ``dm.basis``) and `y` the response at the usable rows.
    Usable rows are those whose response and every required lagged value are
    present; no imputation is performed.
    """
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}")
    grid = series.grid
    n = len(grid)
    maxlag = spec.max_lag(target)
    resp, resp_present = series.channel(target)
    if n <= maxlag:
        raise ValueError(f"series of {n} hours cannot cover the maximum lag {maxlag}")

    t0 = maxlag
    ok = resp_present[t0:].copy()
    for reg in TARGETS:
        needed = sorted({k for (tgt, r, _), ks in spec.lags.items()
                         if tgt == target and r == reg for k in ks})
        if not needed:
            continue
        _, present = series.channel(reg)
        for k in needed:
            ok &= present[t0 - k:n - k]
    rows = np.nonzero(ok)[0] + t0
    if rows.size == 0:
        raise ValueError("no usable rows: every candidate row has a missing lag or response")

    tv = tuple(spec.time_varying.get(target, ()))
    B = None
    if tv:
        if basis is None:
            groups = spec.groups_for(target)
            cal = prepare_calendar(series, groups, calendar)
            trend_span = (grid.datetime_of(int(rows[0])), grid.datetime_of(int(rows[-1])))
            basis = BasisSet(groups, calendar=cal, trend_span=trend_span)
        B = basis.evaluate(_RowView(grid, rows))
    nb = 0 if B is None else B.shape[1]

    tv_keys = {key for key in tv if key != INTERCEPT}
    p = (nb if INTERCEPT in tv else 0)
    for reg, c in spec.regressor_pairs(target):
        ks = spec.lags[(target, reg, c)]
        p += len(ks) + nb * sum(1 for k in ks if (reg, c, k) in tv_keys)

    X = np.empty((rows.size, p))
    columns = []
    col = 0
    if INTERCEPT in tv:
        X[:, :nb] = B
        columns.extend(ColumnInfo(target, None, None, None, b) for b in basis.info)
        col = nb
    for reg, c in spec.regressor_pairs(target):
        vals, _ = series.channel(reg)
        for k in spec.lags[(target, reg, c)]:
            x = vals[rows - k]
            if c != NEG_INF:
                x = np.maximum(x, c)
            X[:, col] = x
            columns.append(ColumnInfo(target, reg, c, k))
            col += 1
            if (reg, c, k) in tv_keys:
                X[:, col:col + nb] = x[:, None] * B
                columns.extend(ColumnInfo(target, reg, c, k, b) for b in basis.info)
                col += nb
    assert col == p

    dm = DesignMatrix(X, rows, columns, target, grid)
    dm.basis = basis
    return dm, resp[rows].astype(float)


# --------------------------------------------------------------------------
# Standardization


class StandardizedProblem:
    """Centered, unit-variance regression problem plus the back-transform record.

    Zero-variance columns are dropped (and logged); ``kept`` maps the retained
    column positions back to the original design."""

    def __init__(self, X, y, design, kept, col_center, col_scale, y_center, y_scale):
        self.X = X
        self.y = y
        self.design = design
        self.kept = kept
        self.col_center = col_center
        self.col_scale = col_scale
        self.y_center = y_center
        self.y_scale = y_scale

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def back_transform(self, beta_std: np.ndarray):
        """Original-scale coefficients over all design columns, plus intercept."""
        beta = np.zeros(self.design.p)
        beta[self.kept] = beta_std * (self.y_scale / self.col_scale)
        intercept = self.y_center - float(self.design.center @ beta)
        return beta, intercept

    def predict_original(self, beta_full: np.ndarray, intercept: float) -> np.ndarray:
        return self.design.X @ beta_full + intercept


def standardize(dm: DesignMatrix, y: np.ndarray) -> StandardizedProblem:
    """Center and scale every column and the response to mean 0, variance 1."""
    X = dm.X
    if X.shape[0] < 2:
        raise ValueError("standardization needs at least two rows")
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    keep = scale > _ZERO_SD_RTOL * np.maximum(1.0, np.abs(center))
    dropped = np.nonzero(~keep)[0]
    if dropped.size:
        log.info("dropping %d constant column(s): %s", dropped.size,
                 ", ".join(dm.columns[j].label() for j in dropped[:10]))
    y = np.asarray(y, dtype=float)
    y_center = y.mean()
    y_scale = y.std()
    if y_scale <= _ZERO_SD_RTOL * max(1.0, abs(y_center)):
        raise ValueError("response has zero variance")
    kept = np.nonzero(keep)[0]
    Xs = (X[:, kept] - center[kept]) / scale[kept]
    ys = (y - y_center) / y_scale
    dm.center = center
    dm.scale = scale
    return StandardizedProblem(Xs, ys, dm, kept, center[kept], scale[kept], y_center, y_scale)
