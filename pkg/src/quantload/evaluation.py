"""Scoring: pinball loss over the 99 quantiles, MAPE, and score-table reporting."""

import logging
from dataclasses import dataclass

import numpy as np

from .forecast import QuantileForecast

log = logging.getLogger(__name__)


def pinball(forecast, actual, present=None, levels=None) -> float:
    """Mean pinball loss over hours and quantile levels.

    For level tau = q/100, prediction z and actual y the loss is
    ``tau * (y - z)`` when y >= z and ``(1 - tau) * (z - y)`` otherwise.
    Hours with a missing actual are skipped (use :func:`pinball_detail` for
    the skip count).
    """
    return pinball_detail(forecast, actual, present, levels)[0]


def pinball_detail(forecast, actual, present=None, levels=None):
    """Pinball loss plus (scored, skipped) hour counts."""
    if isinstance(forecast, QuantileForecast):
        values, levels = forecast.values, forecast.levels
    else:
        values = np.asarray(forecast, dtype=float)
        if levels is None:
            levels = tuple(range(1, values.shape[1] + 1))
    actual = np.asarray(actual, dtype=float)
    if actual.shape[0] != values.shape[0]:
        raise ValueError(
            f"forecast spans {values.shape[0]} hours but actuals span {actual.shape[0]}"
        )
    ok = np.isfinite(actual)
    if present is not None:
        ok &= np.asarray(present, dtype=bool)
    skipped = int(actual.shape[0] - ok.sum())
    if skipped:
        log.info("pinball: skipping %d hour(s) with missing actuals", skipped)
    if not np.any(ok):
        raise ValueError("no hours with observed actuals to score")
    tau = np.asarray(levels, dtype=float) / 100.0
    diff = actual[ok, None] - values[ok]
    loss = np.where(diff >= 0, tau * diff, (tau - 1.0) * diff)
    return float(loss.mean()), int(ok.sum()), skipped


def mape(pred, actual, present=None) -> float:
    """Mean absolute percentage error; zero actuals are excluded with a warning."""
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise ValueError("prediction and actual spans differ")
    ok = np.isfinite(actual) & np.isfinite(pred)
    if present is not None:
        ok &= np.asarray(present, dtype=bool)
    zero = ok & (actual == 0)
    if np.any(zero):
        log.warning("mape: excluding %d hour(s) with zero actuals", int(zero.sum()))
        ok &= ~zero
    if not np.any(ok):
        raise ValueError("no scoreable hours for MAPE")
    return float(np.mean(np.abs(actual[ok] - pred[ok]) / np.abs(actual[ok])) * 100.0)


@dataclass
class ScoreEntry:
    """One task scored for one model."""

    task: str
    model: str
    pinball: float
    mape: float | None = None
    hours: int = 0
    skipped: int = 0


@dataclass
class ScoreReport:
    entries: list

    def models(self):
        seen = []
        for e in self.entries:
            if e.model not in seen:
                seen.append(e.model)
        return seen

    def tasks(self):
        seen = []
        for e in self.entries:
            if e.task not in seen:
                seen.append(e.task)
        return seen

    def average(self, model: str) -> float:
        vals = [e.pinball for e in self.entries if e.model == model]
        return float(np.mean(vals)) if vals else float("nan")


def score_table(report: ScoreReport) -> str:
    """Aligned text table: one row per task, models as columns, best pinball
    score per row marked with ``*``, and the per-model average as a final row."""
    if not report.entries:
        raise ValueError("nothing to tabulate")
    models = report.models()
    tasks = report.tasks()
    cell = {(e.task, e.model): e.pinball for e in report.entries}

    def fmt_row(task, values):
        best = min((v for v in values if v is not None), default=None)
        out = []
        for v in values:
            if v is None:
                out.append("-")
            else:
                mark = "*" if v == best else " "
                out.append(f"{v:.2f}{mark}")
        return [task] + out

    rows = [fmt_row(t, [cell.get((t, m)) for m in models]) for t in tasks]
    avg_vals = [report.average(m) for m in models]
    rows.append(fmt_row("average", [None if np.isnan(v) else v for v in avg_vals]))

    header = ["task"] + models
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


def scores_csv(report: ScoreReport) -> str:
    """Machine-readable scores: ``task,model,pinball,mape`` rows."""
    lines = ["task,model,pinball,mape"]
    for e in report.entries:
        mape_s = "" if e.mape is None else repr(float(e.mape))
        lines.append(f"{e.task},{e.model},{float(e.pinball)!r},{mape_s}")
    return "\n".join(lines) + "\n"
