"""Sensor-pose chains: from the clone window to a sensor frame at a time.

Every aiding sensor evaluates its model against the sensor pose

    R_EtoS = R_ItoS @ R'        p_S^E = p' + R'^T p_S^I

where (R', p') is the IMU pose at the measurement's IMU-clock time
(t_sensor + t_off), produced either by window interpolation (asynchronous
measurements) or taken from a clone (measurements aligned with clone times,
where the time-offset sensitivity uses the velocity/rate snapshot stored on
the clone). ``p_S^I`` comes from the stored extrinsic (R_ItoS, p_I_in_S) as
``-R_ItoS^T p_I_in_S``; GNSS stores the lever arm p_S^I directly and has no
sensor rotation.

All blocks are first-order sensitivities under the left-multiplicative error
convention. The 6x6 ``J_interp`` block (sensor pose w.r.t. interpolated
pose) is what the interpolation error model maps through when charging
R_eps to a measurement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .interp import interpolate_pose
from .so3 import skew

__all__ = ["ChainResult", "select_control_indices", "interp_sensor_pose",
           "clone_sensor_pose"]

_EYE3 = np.eye(3)


@dataclass
class ChainResult:
    """Sensor pose plus its Jacobian blocks.

    ``J_clone[k]`` is the 6x6 block w.r.t. the error of control pose
    ``clone_times[k]``; ``J_ext`` w.r.t. the sensor extrinsic (rotation,
    position) when it has one, else None; ``J_arm`` w.r.t. a stored lever
    arm (3 columns) when that flavor is used; ``J_toff`` the 6-vector
    w.r.t. the time offset; ``J_interp`` the 6x6 block w.r.t. the
    interpolated IMU pose error. Row order is (theta_S, p_S).
    """

    R: np.ndarray
    p: np.ndarray
    clone_times: list[float]
    J_clone: np.ndarray
    J_toff: np.ndarray
    J_interp: np.ndarray
    J_ext: np.ndarray | None = None
    J_arm: np.ndarray | None = None


def select_control_indices(ts: np.ndarray, t_query: float, order: int):
    """Pick ``order+1`` consecutive control times bracketing ``t_query``.

    The window is grown symmetrically around the bracketing interval and
    clamped at the ends; if fewer poses exist the order degrades to what is
    available.
    """
    n = len(ts)
    if n < 2:
        raise ValueError("need at least two clones to interpolate")
    use = min(order, n - 1)
    i = int(np.searchsorted(ts, t_query, side="right")) - 1
    i = min(max(i, 0), n - 2)
    lo = i - (use - 1) // 2
    lo = min(max(lo, 0), n - 1 - use)
    return np.arange(lo, lo + use + 1)


def _assemble(R_q, p_q, J_rot, c, dth, dpdt, R_IS, p_S_in_I, times):
    k = J_rot.shape[0]
    RqT = R_q.T
    lever = RqT @ skew(p_S_in_I)
    R_ES = R_IS @ R_q
    p_SE = p_q + RqT @ p_S_in_I
    J_clone = np.zeros((k, 6, 6))
    for j in range(k):
        J_clone[j, 0:3, 0:3] = R_IS @ J_rot[j]
        J_clone[j, 3:6, 0:3] = lever @ J_rot[j]
        J_clone[j, 3:6, 3:6] = c[j] * _EYE3
    J_toff = np.concatenate([R_IS @ dth, lever @ dth + dpdt])
    J_interp = np.zeros((6, 6))
    J_interp[0:3, 0:3] = R_IS
    J_interp[3:6, 0:3] = lever
    J_interp[3:6, 3:6] = _EYE3
    return ChainResult(
        R=R_ES, p=p_SE, clone_times=list(times), J_clone=J_clone,
        J_toff=J_toff, J_interp=J_interp,
    )


def _extrinsic_blocks(res: ChainResult, R_q, R_IS, p_I_in_S):
    RqT = R_q.T
    J_ext = np.zeros((6, 6))
    J_ext[0:3, 0:3] = _EYE3
    J_ext[3:6, 0:3] = -RqT @ R_IS.T @ skew(p_I_in_S)
    J_ext[3:6, 3:6] = -RqT @ R_IS.T
    res.J_ext = J_ext


def interp_sensor_pose(
    clone_ts: np.ndarray,
    clone_Rs: np.ndarray,
    clone_ps: np.ndarray,
    t_sensor: float,
    order: int,
    R_ItoS: np.ndarray | None,
    p_I_in_S: np.ndarray | None,
    t_off: float = 0.0,
    lever_arm: np.ndarray | None = None,
) -> ChainResult:
    """Sensor pose at an asynchronous measurement time via interpolation.

    Either pass the stored extrinsic ``(R_ItoS, p_I_in_S)`` or, for GNSS,
    ``lever_arm`` = p_S_in_I with ``R_ItoS=None``.
    """
    t_imu = t_sensor + t_off
    idx = select_control_indices(np.asarray(clone_ts, float), t_imu, order)
    ts = np.asarray(clone_ts, float)[idx]
    R_q, p_q, J_rot, c, dth, dpdt = interpolate_pose(
        ts, np.asarray(clone_Rs, float)[idx], np.asarray(clone_ps, float)[idx],
        t_imu,
    )
    if lever_arm is not None:
        res = _assemble(R_q, p_q, J_rot, c, dth, dpdt, _EYE3, lever_arm, ts)
        res.J_arm = R_q.T.copy()
        return res
    p_S_in_I = -R_ItoS.T @ p_I_in_S
    res = _assemble(R_q, p_q, J_rot, c, dth, dpdt, R_ItoS, p_S_in_I, ts)
    _extrinsic_blocks(res, R_q, R_ItoS, p_I_in_S)
    return res


def clone_sensor_pose(
    clone_R: np.ndarray,
    clone_p: np.ndarray,
    clone_t: float,
    v_hat: np.ndarray,
    omega_hat: np.ndarray,
    R_ItoS: np.ndarray | None,
    p_I_in_S: np.ndarray | None,
    lever_arm: np.ndarray | None = None,
) -> ChainResult:
    """Sensor pose for a measurement aligned with a clone time.

    The time-offset column uses the first-order motion model around the
    clone: the pose at a shifted time moves by (-omega, v + R^T (omega x
    p_S^I)) per unit offset, with (v, omega) the snapshot stored on the
    clone.
    """
    if lever_arm is not None:
        R_IS = _EYE3
        p_S_in_I = np.asarray(lever_arm, float)
    else:
        R_IS = R_ItoS
        p_S_in_I = -R_ItoS.T @ p_I_in_S
    RcT = clone_R.T
    lever = RcT @ skew(p_S_in_I)
    res = ChainResult(
        R=R_IS @ clone_R,
        p=clone_p + RcT @ p_S_in_I,
        clone_times=[clone_t],
        J_clone=np.zeros((1, 6, 6)),
        J_toff=np.concatenate(
            [-(R_IS @ omega_hat), v_hat + RcT @ np.cross(omega_hat, p_S_in_I)]
        ),
        J_interp=np.zeros((6, 6)),
    )
    res.J_clone[0, 0:3, 0:3] = R_IS
    res.J_clone[0, 3:6, 0:3] = lever
    res.J_clone[0, 3:6, 3:6] = _EYE3
    res.J_interp[0:3, 0:3] = R_IS
    res.J_interp[3:6, 0:3] = lever
    res.J_interp[3:6, 3:6] = _EYE3
    if lever_arm is not None:
        res.J_arm = RcT.copy()
    else:
        _extrinsic_blocks(res, clone_R, R_IS, p_I_in_S)
    return res
