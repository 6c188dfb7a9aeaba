"""Calibrate the interpolation error model on a reference trajectory.

For every (order, clone rate) grid point the true trajectory is sampled
at the clone rate, interpolated back at a dense set of query times, and
the pose errors are regressed against the local motion magnitudes
(angular acceleration for orientation, net linear acceleration for
position). Zero-intercept slopes through binned medians give the two
per-cell coefficients; alternating isotonic sweeps then enforce that
error never grows with rate or order.
"""

from __future__ import annotations

import numpy as np

from .. import so3
from ..chains import select_control_indices
from ..interp import (SlopeTable, config_hash, fit_slopes,
                      interpolate_pose, monotone_table)
from ..sim.trajectory import Trajectory

DEFAULT_ORDERS = (1, 3, 5, 7, 9)
DEFAULT_RATES = (4.0, 6.0, 8.0, 10.0, 14.0, 20.0, 30.0)
BIN_ALPHA = 0.7
BIN_ACC = 7.0
QUERY_HZ = 100.0
FD_H = 1e-3


def slope_config(cfg) -> dict:
    """The part of a config that determines the slope table."""
    from ..sim.sensors import _load_waypoints

    wp = _load_waypoints(cfg.trajectory.waypoints)
    return {
        "waypoints": [[float(x) for x in row] for row in np.atleast_2d(wp)],
        "yaw_mode": cfg.trajectory.yaw_mode,
        "order": int(cfg.estimator.order),
        "rates": [float(r) for r in cfg.estimator.candidate_rates],
    }


def build_slope_table(waypoints, yaw_mode="spline", orders=DEFAULT_ORDERS,
                      rates=DEFAULT_RATES, query_hz=QUERY_HZ,
                      bin_alpha=BIN_ALPHA, bin_acc=BIN_ACC,
                      meta="") -> SlopeTable:
    """Fit the (order, rate) error-slope grid from a trajectory.

    ``waypoints`` is an array of waypoint rows or a CSV path.
    """
    from ..sim.sensors import _load_waypoints

    traj = Trajectory(_load_waypoints(waypoints), yaw_mode=yaw_mode)
    span = traj.t1 - traj.t0
    margin = 0.05 * span
    t_lo, t_hi = traj.t0 + margin, traj.t1 - margin
    tq = np.arange(t_lo, t_hi, 1.0 / query_hz)
    # motion magnitudes at the query times
    alpha = np.linalg.norm(
        (traj.omega(tq + FD_H) - traj.omega(tq - FD_H)) / (2 * FD_H),
        axis=1)
    acc = np.linalg.norm(traj.acceleration(tq), axis=1)
    R_true = traj.rotation(tq)
    p_true = traj.position(tq)

    rows_o, rows_r, s_o, s_p, weights = [], [], [], [], []
    for order in orders:
        for hz in rates:
            ts = np.arange(t_lo - margin / 2, t_hi + margin / 2,
                           1.0 / hz)
            Rs = traj.rotation(ts)
            ps = traj.position(ts)
            err_o = np.empty(tq.size)
            err_p = np.empty(tq.size)
            for k, t in enumerate(tq):
                idx = select_control_indices(ts, t, order)
                R_q, p_q, _, _, _, _ = interpolate_pose(
                    ts[idx], Rs[idx], ps[idx], t)
                err_o[k] = np.linalg.norm(
                    so3.log_so3(R_true[k] @ R_q.T))
                err_p[k] = np.linalg.norm(p_true[k] - p_q)
            rows_o.append(int(order))
            rows_r.append(float(hz))
            s_o.append(fit_slopes(alpha, err_o, bin_alpha))
            s_p.append(fit_slopes(acc, err_p, bin_acc))
            weights.append(float(tq.size))

    orders_arr = np.array(rows_o)
    rates_arr = np.array(rows_r)
    w = np.array(weights)
    s_o = monotone_table(orders_arr, rates_arr, np.array(s_o), w)
    s_p = monotone_table(orders_arr, rates_arr, np.array(s_p), w)
    return SlopeTable(orders=orders_arr, rates=rates_arr, s_o=s_o,
                      s_p=s_p, meta=meta)


def table_for_config(cfg, orders=DEFAULT_ORDERS, rates=None) -> SlopeTable:
    """Slope table keyed to a run config (rates default to candidates)."""
    from ..sim.sensors import _load_waypoints

    if rates is None:
        rates = sorted(set(list(DEFAULT_RATES)
                           + [float(r) for r in
                              cfg.estimator.candidate_rates]
                           + [float(cfg.estimator.clone_rate)]))
    wp = _load_waypoints(cfg.trajectory.waypoints)
    return build_slope_table(wp, yaw_mode=cfg.trajectory.yaw_mode,
                             orders=orders, rates=rates,
                             meta=config_hash(slope_config(cfg)))
