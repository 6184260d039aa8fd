"""Calendar arithmetic on a regular hourly grid and the public-holiday calendar."""

import logging
from dataclasses import dataclass, replace
from datetime import date, datetime, timedelta
from functools import cached_property

import numpy as np

log = logging.getLogger(__name__)

EPOCH = datetime(2000, 1, 1)
_EPOCH_DAY = EPOCH.toordinal()
HOUR = timedelta(hours=1)
HOURS_PER_WEEK = 168
AVG_HOURS_PER_YEAR = 8765.76  # 24 * 365.24

HOLIDAY_WINDOW_HOURS = 36  # 6 h before midnight + 24 h + 6 h after
_WINDOW_LEAD = 6

_WEEKDAY_TOKENS = {
    "mon": 0, "monday": 0, "tue": 1, "tuesday": 1, "wed": 2, "wednesday": 2,
    "thu": 3, "thursday": 3, "fri": 4, "friday": 4, "sat": 5, "saturday": 5,
    "sun": 6, "sunday": 6,
}


def _wall_clock(t):
    """Accept either an HourStamp or a plain datetime."""
    return t.wall_clock if isinstance(t, HourStamp) else t


def abs_hour(t) -> int:
    """Whole hours between `t` and the fixed epoch 2000-01-01 00:00 (may be negative)."""
    delta = _wall_clock(t) - EPOCH
    if delta.seconds % 3600 or delta.microseconds:
        raise ValueError(f"{t!r} is not aligned to a whole hour")
    return delta.days * 24 + delta.seconds // 3600


def hour_of_day(t) -> int:
    """Hour of the day in 1..24 (1 = 00:00, 24 = 23:00)."""
    return _wall_clock(t).hour + 1


def day_of_week(t) -> int:
    """Day of the week in 1..7 with Sunday = 1."""
    return (_wall_clock(t).weekday() + 1) % 7 + 1


def hour_of_week(t) -> int:
    """Hour of the week in 1..168, counting from Sunday 00:00."""
    wc = _wall_clock(t)
    return (day_of_week(wc) - 1) * 24 + wc.hour + 1


def _is_leap(year: int) -> bool:
    return year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)


def day_of_year(t) -> int:
    """Day of the year in 1..365; in leap years Feb 29 folds onto Feb 28 (both 59)."""
    wc = _wall_clock(t)
    yday = wc.timetuple().tm_yday
    if _is_leap(wc.year) and yday >= 60:
        yday -= 1
    return yday


@dataclass(frozen=True)
class HourStamp:
    """A position on an hourly grid: integer index plus its wall-clock datetime."""

    index: int
    wall_clock: datetime


class HourlyGrid:
    """A gapless, duplicate-free hourly time axis anchored at a whole-hour start.

    Calendar covariates (hour of day / week, folded day of year, absolute hour
    since the epoch) are exposed as cached numpy arrays for vectorized use.
    """

    def __init__(self, start: datetime, n_hours: int):
        if start.minute or start.second or start.microsecond:
            raise ValueError(f"grid start {start} is not aligned to a whole hour")
        if n_hours < 0:
            raise ValueError("n_hours must be non-negative")
        self.start = start
        self.n = int(n_hours)

    def __len__(self):
        return self.n

    def __eq__(self, other):
        return (
            isinstance(other, HourlyGrid)
            and self.start == other.start
            and self.n == other.n
        )

    def __repr__(self):
        return f"HourlyGrid(start={self.start.isoformat()}, n_hours={self.n})"

    @property
    def end_exclusive(self) -> datetime:
        """First wall-clock hour after the grid."""
        return self.start + self.n * HOUR

    @property
    def start_dt(self) -> datetime:
        return self.start

    @property
    def end_dt(self) -> datetime:
        """Last wall-clock hour on the grid."""
        if self.n == 0:
            raise ValueError("empty grid has no last hour")
        return self.start + (self.n - 1) * HOUR

    def datetime_of(self, index: int) -> datetime:
        if not 0 <= index < self.n:
            raise IndexError(f"hour index {index} outside grid of {self.n} hours")
        return self.start + int(index) * HOUR

    def stamp_of(self, index: int) -> HourStamp:
        return HourStamp(int(index), self.datetime_of(index))

    def index_of(self, wall_clock: datetime) -> int:
        delta = wall_clock - self.start
        if delta.seconds % 3600 or delta.microseconds:
            raise ValueError(f"{wall_clock} is not aligned to the hourly grid")
        idx = delta.days * 24 + delta.seconds // 3600
        if not 0 <= idx < self.n:
            raise IndexError(f"{wall_clock} lies outside the grid span")
        return idx

    def datetimes(self) -> list:
        return [self.start + i * HOUR for i in range(self.n)]

    def after(self, n_hours: int) -> "HourlyGrid":
        """Grid of `n_hours` starting immediately after this one."""
        return HourlyGrid(self.end_exclusive, n_hours)

    @cached_property
    def abshours(self) -> np.ndarray:
        return abs_hour(self.start) + np.arange(self.n, dtype=np.int64)

    @cached_property
    def hods(self) -> np.ndarray:
        return (self.abshours % 24 + 1).astype(np.int64)

    @cached_property
    def dows(self) -> np.ndarray:
        days = self.abshours // 24
        # epoch day 0 (2000-01-01) was a Saturday -> Sunday-first value 7
        return ((days + 6) % 7 + 1).astype(np.int64)

    @cached_property
    def hows(self) -> np.ndarray:
        return (self.dows - 1) * 24 + self.hods

    @cached_property
    def moys(self) -> np.ndarray:
        days = self.abshours // 24
        uniq = np.arange(days[0], days[-1] + 1) if self.n else np.arange(0)
        by_day = np.array(
            [date.fromordinal(_EPOCH_DAY + int(d)).month for d in uniq], dtype=np.int64
        )
        return by_day[days - days[0]] if self.n else by_day

    @cached_property
    def doys(self) -> np.ndarray:
        days = self.abshours // 24
        uniq = np.arange(days[0], days[-1] + 1) if self.n else np.arange(0)
        by_day = np.array(
            [day_of_year(datetime.combine(date.fromordinal(_EPOCH_DAY + int(d)), datetime.min.time()))
             for d in uniq],
            dtype=np.int64,
        )
        return by_day[days - days[0]] if self.n else by_day


# --------------------------------------------------------------------------
# Public-holiday calendar


@dataclass(frozen=True)
class FixedDateRule:
    """A holiday at a literal month/day every year (no observed-day shifting)."""

    month: int
    day: int
    name: str

    def resolve(self, year: int) -> date:
        return date(year, self.month, self.day)


@dataclass(frozen=True)
class WeekdayRule:
    """A holiday at the n-th (or last, ordinal = -1) given weekday of a month.

    `weekday` uses the datetime convention Monday = 0 .. Sunday = 6.
    """

    month: int
    weekday: int
    ordinal: int
    name: str

    def resolve(self, year: int) -> date:
        if self.ordinal >= 1:
            first = date(year, self.month, 1)
            offset = (self.weekday - first.weekday()) % 7
            d = first + timedelta(days=offset + 7 * (self.ordinal - 1))
            if d.month != self.month:
                raise ValueError(
                    f"{self.name}: no {self.ordinal}th weekday {self.weekday} "
                    f"in {year}-{self.month:02d}"
                )
            return d
        if self.ordinal == -1:
            nxt = date(year + (self.month == 12), self.month % 12 + 1, 1)
            last = nxt - timedelta(days=1)
            return last - timedelta(days=(last.weekday() - self.weekday) % 7)
        raise ValueError(f"{self.name}: ordinal must be >= 1 or -1")


@dataclass(frozen=True)
class HolidayCalendar:
    """Fixed-date and weekday-rule holidays, plus optional effective coefficients.

    `effective_coeffs`, when set, is a 168-vector indexed by hour-of-week
    (Sunday 00:00 first) with values in [0, 1]: Sunday hours 0, the core
    working days Tuesday-Thursday 1.
    """

    fixed: tuple
    flexible: tuple
    effective_coeffs: np.ndarray | None = None

    def __post_init__(self):
        for year in (2011, 2012):  # one common and one leap year
            seen = {}
            for rule in self.rules():
                d = rule.resolve(year)
                if d in seen:
                    raise ValueError(
                        f"holiday rules {seen[d]!r} and {rule.name!r} collide on {d}"
                    )
                seen[d] = rule.name
        if self.effective_coeffs is not None:
            _validate_effective_coeffs(self.effective_coeffs)

    def rules(self) -> tuple:
        return self.fixed + self.flexible

    def occurrences(self, start: datetime, end: datetime) -> list:
        """All (rule, date) occurrences whose 36-hour window can touch [start, end]."""
        pad = timedelta(days=2)
        lo, hi = start - pad, end + pad
        out = []
        for year in range(lo.year, hi.year + 1):
            for rule in self.rules():
                d = rule.resolve(year)
                if lo.date() <= d <= hi.date():
                    out.append((rule, d))
        out.sort(key=lambda rd: (rd[1], rd[0].name))
        return out

    def with_effective_coeffs(self, table: np.ndarray) -> "HolidayCalendar":
        return replace(self, effective_coeffs=np.asarray(table, dtype=float))


def _validate_effective_coeffs(table):
    table = np.asarray(table, dtype=float)
    if table.shape != (HOURS_PER_WEEK,):
        raise ValueError("effective coefficients must be a 168-vector")
    if np.any(table < 0) or np.any(table > 1):
        raise ValueError("effective coefficients must lie in [0, 1]")
    if np.any(table[:24] != 0):
        raise ValueError("Sunday effective coefficients must be 0")
    if np.any(table[48:120] != 1):
        raise ValueError("Tue/Wed/Thu effective coefficients must be 1")


def us_federal_calendar() -> HolidayCalendar:
    """The ten classic United States federal public holidays."""
    fixed = (
        FixedDateRule(1, 1, "new_years_day"),
        FixedDateRule(7, 4, "independence_day"),
        FixedDateRule(11, 11, "veterans_day"),
        FixedDateRule(12, 25, "christmas_day"),
    )
    flexible = (
        WeekdayRule(1, 0, 3, "mlk_day"),
        WeekdayRule(2, 0, 3, "washingtons_birthday"),
        WeekdayRule(5, 0, -1, "memorial_day"),
        WeekdayRule(9, 0, 1, "labor_day"),
        WeekdayRule(10, 0, 2, "columbus_day"),
        WeekdayRule(11, 3, 4, "thanksgiving_day"),
    )
    return HolidayCalendar(fixed=fixed, flexible=flexible)


def parse_holiday_rules(lines, source="<string>") -> HolidayCalendar:
    """Parse holiday rules, one per line.

    Format (``#`` starts a comment)::

        FIX <month>-<day> <name>
        FLEX <month> <weekday> <ordinal> <name>   # ordinal -1 = last

    Weekdays are English names or three-letter abbreviations.
    """
    fixed, flexible = [], []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            kind = parts[0].upper()
            if kind == "FIX":
                month_s, day_s = parts[1].split("-")
                fixed.append(FixedDateRule(int(month_s), int(day_s), parts[2]))
            elif kind == "FLEX":
                wd = _WEEKDAY_TOKENS[parts[2].lower()]
                flexible.append(WeekdayRule(int(parts[1]), wd, int(parts[3]), parts[4]))
            else:
                raise ValueError(f"unknown rule kind {parts[0]!r}")
        except (IndexError, KeyError, ValueError) as exc:
            raise ValueError(f"{source}:{lineno}: bad holiday rule {raw.rstrip()!r}: {exc}") from exc
    return HolidayCalendar(fixed=tuple(fixed), flexible=tuple(flexible))


def read_holiday_file(path) -> HolidayCalendar:
    with open(path, encoding="utf-8") as fh:
        return parse_holiday_rules(fh, source=str(path))


def holiday_window(t, holiday: date) -> int | None:
    """Position 1..36 of `t` inside the window around `holiday`, or None outside.

    The window runs from 18:00 on the preceding day (position 1) through
    05:00 on the following day (position 36).
    """
    wc = _wall_clock(t)
    start = datetime(holiday.year, holiday.month, holiday.day) - _WINDOW_LEAD * HOUR
    delta = wc - start
    if delta.seconds % 3600 or delta.microseconds:
        raise ValueError(f"{t!r} is not aligned to a whole hour")
    hours = delta.days * 24 + delta.seconds // 3600
    return hours + 1 if 0 <= hours < HOLIDAY_WINDOW_HOURS else None


def window_positions(abshours: np.ndarray, occurrences) -> np.ndarray:
    """Window position per hour (0 outside) for a set of (rule, date) occurrences.

    `abshours` must be strictly increasing whole hours since the epoch.
    """
    pos = np.zeros(abshours.shape[0], dtype=np.int64)
    for _, d in occurrences:
        base = abs_hour(datetime(d.year, d.month, d.day)) - _WINDOW_LEAD
        targets = base + np.arange(HOLIDAY_WINDOW_HOURS, dtype=np.int64)
        idx = np.searchsorted(abshours, targets)
        ok = (idx < abshours.shape[0])
        ok[ok] = abshours[idx[ok]] == targets[ok]
        pos[idx[ok]] = np.arange(1, HOLIDAY_WINDOW_HOURS + 1)[ok]
    return pos


# --------------------------------------------------------------------------
# Effective coefficients for fixed-date holidays


def effective_coefficients(profile) -> np.ndarray:
    """Effective coefficient per hour-of-week from a 168-hour mean-load profile.

    For each hour of the week the coefficient is
    ``1 - (high - actual) / (high - low)`` clamped to [0, 1], where `high` is
    the Tuesday-Thursday mean at that hour of the day, `low` the Sunday value,
    and `actual` the profile value itself.  Sunday hours are pinned to 0 and
    Tuesday-Thursday hours to 1 so the reference days carry no/full impact by
    definition.  The result is invariant under affine rescaling of the profile.
    """
    p = np.asarray(profile, dtype=float)
    if p.shape != (HOURS_PER_WEEK,):
        raise ValueError("profile must be a 168-vector (Sunday 00:00 first)")
    if not np.all(np.isfinite(p)):
        raise ValueError("profile contains non-finite values")
    low = p[:24]                                # Sunday
    high = (p[48:72] + p[72:96] + p[96:120]) / 3.0  # Tue, Wed, Thu
    denom = high - low
    if np.any(denom == 0):
        bad = int(np.nonzero(denom == 0)[0][0]) + 1
        raise ValueError(f"degenerate profile: high == low at hour of day {bad}")
    hod = np.arange(HOURS_PER_WEEK) % 24
    coeffs = np.clip(1.0 - (high[hod] - p) / denom[hod], 0.0, 1.0)
    dow = np.arange(HOURS_PER_WEEK) // 24 + 1
    coeffs[dow == 1] = 0.0
    coeffs[(dow >= 3) & (dow <= 5)] = 1.0
    return coeffs


def weekly_mean_profile(values, present, grid: HourlyGrid, calendar=None) -> np.ndarray:
    """Mean value per hour-of-week, excluding weeks containing a public holiday.

    Weeks run Sunday 00:00 to Saturday 23:00.  Falls back to all weeks (with a
    warning) if the exclusion empties any hour-of-week cell.
    """
    values = np.asarray(values, dtype=float)
    present = np.asarray(present, dtype=bool) & np.isfinite(values)
    hows = grid.hows
    ok = present.copy()
    if calendar is not None:
        week = (grid.abshours - (hows - 1)) // HOURS_PER_WEEK
        days = grid.abshours // 24
        holiday_days = np.array(
            sorted({d.toordinal() - _EPOCH_DAY for _, d in
                    calendar.occurrences(grid.start, grid.end_exclusive)}),
            dtype=np.int64,
        )
        if holiday_days.size:
            bad_weeks = np.unique(week[np.isin(days, holiday_days)])
            ok &= ~np.isin(week, bad_weeks)
    for mask in (ok, present):
        counts = np.bincount(hows[mask] - 1, minlength=HOURS_PER_WEEK)
        if np.all(counts > 0):
            if mask is present and not np.array_equal(ok, present):
                log.warning("holiday-week exclusion emptied some hours; using all weeks")
            sums = np.bincount(hows[mask] - 1, weights=values[mask], minlength=HOURS_PER_WEEK)
            return sums / counts
    missing = int(np.nonzero(counts == 0)[0][0]) + 1
    raise ValueError(f"no observations at hour-of-week {missing}; cannot form profile")
