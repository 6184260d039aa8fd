"""Basis functions for time-varying regression coefficients.

Groups, in the order they are assembled for the load equation:

* ``hod_steps``  - 24 cumulative hour-of-day indicators
* ``how_steps``  - 168 cumulative hour-of-week indicators
* ``doy_steps``  - 365 cumulative day-of-year indicators (Feb 29 folded)
* ``annual_splines`` - 6 periodic cubic B-splines over the average year
* ``trend``      - cumulated quadratic B-splines for long-term level shifts
* ``fixed_holidays`` / ``flexible_holidays`` - 36-hour window steps per holiday
* ``hod_annual_interaction`` - products of hod_steps with annual_splines

The cumulative (step) parametrization means each coefficient encodes the
*change* relative to the previous calendar slot, so sparse estimation keeps
only significant changes.  The temperature equation uses only ``hod_steps``,
``annual_splines`` and ``hod_annual_interaction``.
"""

import logging
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .timegrid import (
    AVG_HOURS_PER_YEAR,
    HOLIDAY_WINDOW_HOURS,
    HourlyGrid,
    abs_hour,
    day_of_year,
    hour_of_day,
    hour_of_week,
    holiday_window,
    window_positions,
)

log = logging.getLogger(__name__)

GROUP_HOD = "hod_steps"
GROUP_HOW = "how_steps"
GROUP_DOY = "doy_steps"
GROUP_ANNUAL = "annual_splines"
GROUP_TREND = "trend"
GROUP_FIXED_HOL = "fixed_holidays"
GROUP_FLEX_HOL = "flexible_holidays"
GROUP_INTERACTION = "hod_annual_interaction"

LOAD_GROUPS = (
    GROUP_HOD, GROUP_HOW, GROUP_DOY, GROUP_ANNUAL, GROUP_TREND,
    GROUP_FIXED_HOL, GROUP_FLEX_HOL, GROUP_INTERACTION,
)
TEMP_GROUPS = (GROUP_HOD, GROUP_ANNUAL, GROUP_INTERACTION)

N_ANNUAL_SPLINES = 6
SPLINE_PERIOD_HOURS = AVG_HOURS_PER_YEAR
_SPAN = SPLINE_PERIOD_HOURS / N_ANNUAL_SPLINES  # inter-knot distance

TREND_SUPPORT_HOURS = 2 * AVG_HOURS_PER_YEAR
TREND_RETENTION_BAND = (0.10, 0.90)

_STEP_SIZES = {GROUP_HOD: 24, GROUP_HOW: 168, GROUP_DOY: 365}


def cubic_cardinal_bspline(x):
    """Cardinal cubic B-spline on unit knots, support [0, 4), peak 2/3 at x = 2."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    m = (x >= 0) & (x < 1)
    out[m] = x[m] ** 3 / 6.0
    m = (x >= 1) & (x < 2)
    u = x[m] - 1.0
    out[m] = (-3 * u**3 + 3 * u**2 + 3 * u + 1) / 6.0
    m = (x >= 2) & (x < 3)
    u = x[m] - 2.0
    out[m] = (3 * u**3 - 6 * u**2 + 4) / 6.0
    m = (x >= 3) & (x < 4)
    u = x[m] - 3.0
    out[m] = (1 - u) ** 3 / 6.0
    return out


def cumulated_quadratic_bspline(x):
    """Normalized integral of the cardinal quadratic B-spline: 0 before its
    3-knot support, smoothly and monotonically rising to 1 across it."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    m = (x >= 0) & (x < 1)
    out[m] = x[m] ** 3 / 6.0
    m = (x >= 1) & (x < 2)
    u = x[m]
    out[m] = 0.5 - u**3 / 3.0 + 1.5 * u**2 - 1.5 * u
    m = x >= 2
    out[m] = 1.0 - np.clip(3.0 - x[m], 0.0, None) ** 3 / 6.0
    return out


def annual_spline_matrix(abshours, anchor_hour: float = 0.0) -> np.ndarray:
    """All six periodic annual splines evaluated at the given absolute hours.

    Knots are equidistant over one period of 8765.76 hours and wrap around, so
    the six functions form a partition of unity at every instant.
    """
    z = (np.asarray(abshours, dtype=float) - anchor_hour) / _SPAN
    cols = [cubic_cardinal_bspline((z - k) % N_ANNUAL_SPLINES)
            for k in range(N_ANNUAL_SPLINES)]
    return np.column_stack(cols)


def annual_spline_value(t, k: int, anchor_hour: float = 0.0) -> float:
    """Value of the k-th (1..6) periodic annual spline at hour `t`."""
    if not 1 <= k <= N_ANNUAL_SPLINES:
        raise IndexError(f"annual spline index {k} outside 1..{N_ANNUAL_SPLINES}")
    z = (abs_hour(t) - anchor_hour) / _SPAN
    return float(cubic_cardinal_bspline(np.array([(z - (k - 1)) % N_ANNUAL_SPLINES]))[0])


def step_indicator(kind: str, t, k: int) -> int:
    """Cumulative calendar indicator: 1 iff k <= (hour-of-day | hour-of-week |
    day-of-year) of `t`."""
    size = _STEP_SIZES.get(kind)
    if size is None:
        raise ValueError(f"unknown step kind {kind!r}; expected hod_steps/how_steps/doy_steps")
    if not 1 <= k <= size:
        raise IndexError(f"{kind} index {k} outside 1..{size}")
    current = {GROUP_HOD: hour_of_day, GROUP_HOW: hour_of_week, GROUP_DOY: day_of_year}[kind](t)
    return int(k <= current)


def interaction_value(t, i: int, j: int, anchor_hour: float = 0.0) -> float:
    """Product of hod step i (1..24) with annual spline j (1..6)."""
    if not 1 <= i <= 24:
        raise IndexError(f"hod step index {i} outside 1..24")
    return step_indicator(GROUP_HOD, t, i) * annual_spline_value(t, j, anchor_hour)


def holiday_step(kind: str, holiday_date, t, k: int, coeffs=None) -> float:
    """Window step for one holiday occurrence: 1 (flexible) or the effective
    coefficient at `t` (fixed) iff k <= window position of `t`, else 0."""
    if not 1 <= k <= HOLIDAY_WINDOW_HOURS:
        raise IndexError(f"holiday window index {k} outside 1..{HOLIDAY_WINDOW_HOURS}")
    pos = holiday_window(t, holiday_date)
    if pos is None or k > pos:
        return 0.0
    if kind == "flexible":
        return 1.0
    if kind == "fixed":
        if coeffs is None:
            raise ValueError("fixed-date holiday basis needs effective coefficients")
        return float(np.asarray(coeffs, dtype=float)[hour_of_week(t) - 1])
    raise ValueError(f"unknown holiday kind {kind!r}")


# --------------------------------------------------------------------------
# Long-term trend functions


@dataclass(frozen=True)
class TrendFunction:
    """One long-term level-shift function: flat at 0, rising monotonically over
    a two-year window starting at `onset_hour`, flat at 1 afterwards."""

    onset_hour: float
    width_hours: float
    year: int

    def values(self, abshours) -> np.ndarray:
        z = (np.asarray(abshours, dtype=float) - self.onset_hour) / (self.width_hours / 3.0)
        return cumulated_quadratic_bspline(z)

    def __call__(self, t) -> float:
        return float(self.values(np.array([abs_hour(t)], dtype=float))[0])


def trend_candidates(span_start: datetime, span_end: datetime) -> list:
    """Candidate trend functions anchored at January 1 of each year, spaced one
    year apart, wide enough to overlap the given span from either side."""
    first = span_start.year - int(np.ceil(TREND_SUPPORT_HOURS / AVG_HOURS_PER_YEAR)) - 1
    out = []
    for year in range(first, span_end.year + 2):
        onset = abs_hour(datetime(year, 1, 1))
        out.append(TrendFunction(onset_hour=float(onset), width_hours=TREND_SUPPORT_HOURS, year=year))
    return out


def retained_trend_functions(sample_start: datetime, sample_end: datetime) -> list:
    """Trend functions whose transition lies essentially inside the sample.

    A candidate is kept iff its value is at most 10% of its plateau at the
    sample start and at least 90% at the sample end, i.e. the rise happens
    within the observed span.  Functions still rising at the sample end (the
    spurious-trend risk) and functions that are constant in-sample are dropped.
    Short spans (under the two-year transition width) retain nothing.
    """
    lo, hi = TREND_RETENTION_BAND
    h0, h1 = float(abs_hour(sample_start)), float(abs_hour(sample_end))
    kept = [
        f for f in trend_candidates(sample_start, sample_end)
        if f.values(np.array([h0]))[0] <= lo and f.values(np.array([h1]))[0] >= hi
    ]
    return kept


# --------------------------------------------------------------------------
# Assembled basis sets


@dataclass(frozen=True)
class BasisInfo:
    """Provenance of one basis function: group tag, 1-based index within the
    group, and an optional label (holiday name or trend anchor year)."""

    group: str
    index: int
    label: str | None = None

    def __str__(self):
        tag = f"{self.group}[{self.label}]" if self.label else self.group
        return f"{tag}#{self.index}"


class BasisSet:
    """An ordered, immutable collection of basis functions for one equation.

    Evaluation works on any object exposing sorted ``abshours`` plus ``hods``,
    ``hows``, ``doys`` arrays and ``start_dt``/``end_dt`` (an `HourlyGrid`, or
    a row subset of one).
    """

    def __init__(self, groups, *, calendar=None, trend_span=None, anchor_hour: float = 0.0):
        unknown = set(groups) - set(LOAD_GROUPS)
        if unknown:
            raise ValueError(f"unknown basis groups: {sorted(unknown)}")
        self.groups = tuple(groups)
        self.calendar = calendar
        self.anchor_hour = float(anchor_hour)
        self.trends = ()
        if GROUP_TREND in self.groups:
            if trend_span is None:
                raise ValueError("trend group requires the in-sample span")
            self.trends = tuple(retained_trend_functions(*trend_span))
        if {GROUP_FIXED_HOL, GROUP_FLEX_HOL} & set(self.groups):
            if calendar is None:
                raise ValueError("holiday groups require a HolidayCalendar")
            if GROUP_FIXED_HOL in self.groups and calendar.effective_coeffs is None:
                raise ValueError("fixed-date holiday group requires effective coefficients")
        self.info = tuple(self._build_info())

    def _build_info(self):
        for group in self.groups:
            if group in _STEP_SIZES:
                for k in range(1, _STEP_SIZES[group] + 1):
                    yield BasisInfo(group, k)
            elif group == GROUP_ANNUAL:
                for k in range(1, N_ANNUAL_SPLINES + 1):
                    yield BasisInfo(group, k)
            elif group == GROUP_TREND:
                for k, f in enumerate(self.trends, start=1):
                    yield BasisInfo(group, k, label=str(f.year))
            elif group == GROUP_FIXED_HOL:
                for rule in self.calendar.fixed:
                    for k in range(1, HOLIDAY_WINDOW_HOURS + 1):
                        yield BasisInfo(group, k, label=rule.name)
            elif group == GROUP_FLEX_HOL:
                for rule in self.calendar.flexible:
                    for k in range(1, HOLIDAY_WINDOW_HOURS + 1):
                        yield BasisInfo(group, k, label=rule.name)
            elif group == GROUP_INTERACTION:
                for j in range(1, N_ANNUAL_SPLINES + 1):
                    for i in range(1, 25):
                        yield BasisInfo(group, 24 * (j - 1) + i)

    @property
    def size(self) -> int:
        return len(self.info)

    def group_size(self, group: str) -> int:
        return sum(1 for b in self.info if b.group == group)

    def positions(self) -> dict:
        """Map each BasisInfo to its column position in evaluated matrices."""
        return {b: i for i, b in enumerate(self.info)}

    def evaluate(self, support) -> np.ndarray:
        n = support.abshours.shape[0]
        out = np.empty((n, self.size))
        col = 0
        hod_block = annual = None
        for group in self.groups:
            if group in _STEP_SIZES:
                current = {GROUP_HOD: support.hods, GROUP_HOW: support.hows,
                           GROUP_DOY: support.doys}[group]
                size = _STEP_SIZES[group]
                block = (current[:, None] >= np.arange(1, size + 1)).astype(float)
                if group == GROUP_HOD:
                    hod_block = block
                out[:, col:col + size] = block
                col += size
            elif group == GROUP_ANNUAL:
                annual = annual_spline_matrix(support.abshours, self.anchor_hour)
                out[:, col:col + N_ANNUAL_SPLINES] = annual
                col += N_ANNUAL_SPLINES
            elif group == GROUP_TREND:
                for f in self.trends:
                    out[:, col] = f.values(support.abshours)
                    col += 1
            elif group in (GROUP_FIXED_HOL, GROUP_FLEX_HOL):
                rules = self.calendar.fixed if group == GROUP_FIXED_HOL else self.calendar.flexible
                occs = self.calendar.occurrences(support.start_dt, support.end_dt)
                steps = np.arange(1, HOLIDAY_WINDOW_HOURS + 1)
                for rule in rules:
                    pos = window_positions(
                        support.abshours, [(r, d) for r, d in occs if r == rule]
                    )
                    block = (pos[:, None] >= steps).astype(float)
                    if group == GROUP_FIXED_HOL:
                        block *= self.calendar.effective_coeffs[support.hows - 1][:, None]
                    out[:, col:col + HOLIDAY_WINDOW_HOURS] = block
                    col += HOLIDAY_WINDOW_HOURS
            elif group == GROUP_INTERACTION:
                if hod_block is None:
                    hod_block = (support.hods[:, None] >= np.arange(1, 25)).astype(float)
                if annual is None:
                    annual = annual_spline_matrix(support.abshours, self.anchor_hour)
                for j in range(N_ANNUAL_SPLINES):
                    out[:, col:col + 24] = hod_block * annual[:, j:j + 1]
                    col += 24
        assert col == self.size
        return out

    def vector(self, t) -> np.ndarray:
        """The full basis vector at a single hour."""
        from .timegrid import _wall_clock  # local import to keep module surface tidy

        return self.evaluate(HourlyGrid(_wall_clock(t), 1))[0]


def for_target(target: str, *, calendar=None, trend_span=None, groups=None,
               anchor_hour: float = 0.0) -> BasisSet:
    """Default basis set for the load or temperature equation."""
    if groups is None:
        if target == "load":
            groups = LOAD_GROUPS
        elif target == "temp":
            groups = TEMP_GROUPS
        else:
            raise ValueError(f"unknown target {target!r}")
    return BasisSet(groups, calendar=calendar, trend_span=trend_span, anchor_hour=anchor_hour)
