"""Accuracy and consistency metrics against simulated truth.

Estimates are matched to the nearest truth sample; pairs further apart
than one millisecond are discarded rather than interpolated.
"""

from __future__ import annotations

import numpy as np

from .. import so3
from ..gnss import align_yaw_translation

MATCH_TOL = 1e-3


def match_truth(t_est, t_truth, tol=MATCH_TOL):
    """Indices pairing each estimate time with its nearest truth time.

    Returns (est_idx, truth_idx); estimates with no truth sample within
    ``tol`` seconds are left out.
    """
    t_est = np.asarray(t_est, float)
    t_truth = np.asarray(t_truth, float)
    j = np.searchsorted(t_truth, t_est)
    j = np.clip(j, 1, len(t_truth) - 1)
    left = np.abs(t_truth[j - 1] - t_est)
    right = np.abs(t_truth[j] - t_est)
    j = np.where(left < right, j - 1, j)
    ok = np.abs(t_truth[j] - t_est) <= tol
    return np.flatnonzero(ok), j[ok]


def _ori_errors(R_est, R_true):
    rel = np.einsum("kij,klj->kil", R_true, R_est)  # R_true @ R_est^T
    return np.stack([so3.log_so3(r) for r in rel])


def compute_rmse(result, truth):
    """Position and orientation RMSE of a run against truth.

    Orientation error is the norm of the rotation log of
    ``R_true @ R_est^T`` in radians.
    """
    ei, ti = match_truth(result.t, truth["t"])
    if ei.size == 0:
        return {"pos_rmse": np.nan, "ori_rmse": np.nan, "matched": 0}
    dp = result.p[ei] - truth["p"][ti]
    th = _ori_errors(result.R[ei], truth["R"][ti])
    return {
        "pos_rmse": float(np.sqrt(np.mean(np.sum(dp ** 2, axis=1)))),
        "ori_rmse": float(np.sqrt(np.mean(np.sum(th ** 2, axis=1)))),
        "matched": int(ei.size),
    }


def compute_nees(result, truth):
    """Mean normalized estimation error squared per 3-dof block.

    The error convention matches the filter: ``R_true = Exp(e) R_est``.
    A consistent filter gives values near 3. Time steps whose covariance
    block is numerically singular are skipped and counted.
    """
    ei, ti = match_truth(result.t, truth["t"])
    out = {"matched": int(ei.size), "singular": 0}
    errs = {
        "ori": _ori_errors(result.R[ei], truth["R"][ti]),
        "pos": truth["p"][ti] - result.p[ei],
        "vel": truth["v"][ti] - result.v[ei],
    }
    covs = {"ori": result.P_theta[ei], "pos": result.P_p[ei],
            "vel": result.P_v[ei]}
    for key in ("ori", "pos", "vel"):
        vals = []
        for e, P in zip(errs[key], covs[key]):
            try:
                L = np.linalg.cholesky(P + 1e-18 * np.eye(3))
            except np.linalg.LinAlgError:
                out["singular"] += 1
                continue
            y = np.linalg.solve(L, e)
            vals.append(float(y @ y))
        out[f"nees_{key}"] = float(np.mean(vals)) if vals else np.nan
    return out


def compute_ate(p_est, p_true, alignment="yaw"):
    """Absolute trajectory error after optional alignment.

    alignment: "none", "yaw" (yaw plus translation), or "se3".
    """
    p_est = np.asarray(p_est, float)
    p_true = np.asarray(p_true, float)
    if p_est.shape[0] < 3:
        raise ValueError("ATE needs at least 3 matched poses")
    if p_est.shape != p_true.shape:
        raise ValueError("pose sets must have equal shape")
    if alignment == "none":
        res = p_true - p_est
    elif alignment == "yaw":
        yaw, tr = align_yaw_translation(p_est, p_true)
        res = p_true - (p_est @ so3.rot_z(yaw).T + tr)
    elif alignment == "se3":
        mu_e = p_est.mean(axis=0)
        mu_t = p_true.mean(axis=0)
        W = (p_true - mu_t).T @ (p_est - mu_e)
        U, _, Vt = np.linalg.svd(W)
        S = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
        R = U @ S @ Vt
        res = p_true - ((p_est - mu_e) @ R.T + mu_t)
    else:
        raise ValueError(f"unknown alignment {alignment!r}")
    return float(np.sqrt(np.mean(np.sum(res ** 2, axis=1))))
