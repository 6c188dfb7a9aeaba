"""Metrics, slope-table calibration, and Monte-Carlo experiment drivers."""

from .metrics import compute_ate, compute_nees, compute_rmse
from .slopes import build_slope_table
from .runner import EXPERIMENTS, run_monte_carlo, run_single

__all__ = [
    "compute_ate",
    "compute_nees",
    "compute_rmse",
    "build_slope_table",
    "EXPERIMENTS",
    "run_monte_carlo",
    "run_single",
]
