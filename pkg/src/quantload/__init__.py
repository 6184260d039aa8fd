"""Probabilistic hourly electric-load forecasting.

A sparse bivariate threshold autoregression with time-varying coefficients,
estimated by coordinate-descent shrinkage with BIC tuning, plus
residual-bootstrap quantile forecasts, two scenario-based regression
benchmarks, and a pinball-loss evaluation harness.
"""

from .design import HourlySeries, ModelSpec, build_design, default_spec, standardize
from .evaluation import ScoreEntry, ScoreReport, mape, pinball, score_table
from .forecast import (
    QuantileForecast,
    SimulationConfig,
    fit_equation,
    quantiles_from_paths,
    rolling_task_forecast,
    simulate_paths,
)
from .lasso import LambdaGrid, LassoFit, coordinate_descent, fit_path_bic, lambda_grid
from .timegrid import HolidayCalendar, HourlyGrid, HourStamp, us_federal_calendar

__version__ = "0.1.0"

__all__ = [
    "HourlySeries", "ModelSpec", "build_design", "default_spec", "standardize",
    "ScoreEntry", "ScoreReport", "mape", "pinball", "score_table",
    "QuantileForecast", "SimulationConfig", "fit_equation", "quantiles_from_paths",
    "rolling_task_forecast", "simulate_paths",
    "LambdaGrid", "LassoFit", "coordinate_descent", "fit_path_bic", "lambda_grid",
    "HolidayCalendar", "HourlyGrid", "HourStamp", "us_federal_calendar",
    "__version__",
]
