"""Differential-drive wheel odometry.

Encoder rates are mapped to planar body rates through the wheel intrinsics
(left radius, right radius, baseline), preintegrated into a relative SE(2)
motion between two clone times, and applied as a three-row update (relative
yaw and in-plane displacement in the earlier odometry frame). The
preintegration carries first-order Jacobians with respect to the encoder
noise and the intrinsics so both enter the update correctly.

The yaw state follows the global-to-local convention used estimator-wide:
the preintegrated angle is the z-component of Log of the relative rotation,
which for a body turning by ``+w dt`` is ``-w dt``.
"""

from dataclasses import dataclass

import numpy as np

from . import chains, ekf, so3
from .accel import jit
from .errors import PropagationGapError

OMEGA_SERIES_EPS = 1e-6
NOISE_FLOOR = 1e-12

E3 = np.array([0.0, 0.0, 1.0])
LAM = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def body_rates(w_left, w_right, intr):
    """Planar body rates (yaw rate, forward speed) from encoder rates."""
    r_l, r_r, base = intr
    omega = (w_right * r_r - w_left * r_l) / base
    v = (w_right * r_r + w_left * r_l) / 2.0
    return omega, v


@jit
def _preint_kernel(wl, wr, dts, r_l, r_r, base, sigma):
    """Accumulate the SE(2) preintegration over piecewise-constant inputs.

    Returns the motion z = (theta, x, y), its noise covariance, and the
    Jacobian with respect to the intrinsics (r_l, r_r, base).
    """
    z = np.zeros(3)
    cov = np.zeros((3, 3))
    g_int = np.zeros((3, 3))
    q_n = np.empty((2, 2))
    phi_tr = np.eye(3)
    phi_n = np.zeros((3, 2))
    d_int = np.zeros((2, 3))
    for i in range(len(dts)):
        dt = dts[i]
        omega = (wr[i] * r_r - wl[i] * r_l) / base
        v = (wr[i] * r_r + wl[i] * r_l) / 2.0
        th = z[0]
        th1 = th - omega * dt
        if abs(omega) < OMEGA_SERIES_EPS:
            s, c = np.sin(th), np.cos(th)
            fx = v * dt * c + v * omega * dt * dt * 0.5 * s \
                - v * omega * omega * dt ** 3 / 6.0 * c
            fy = -v * dt * s + v * omega * dt * dt * 0.5 * c \
                + v * omega * omega * dt ** 3 / 6.0 * s
            dfx_dw = v * dt * dt * 0.5 * s - v * omega * dt ** 3 / 3.0 * c
            dfy_dw = v * dt * dt * 0.5 * c + v * omega * dt ** 3 / 3.0 * s
        else:
            fx = -v * (np.sin(th1) - np.sin(th)) / omega
            fy = -v * (np.cos(th1) - np.cos(th)) / omega
            dfx_dw = -v * (-dt * omega * np.cos(th1)
                           - np.sin(th1) + np.sin(th)) / (omega * omega)
            dfy_dw = -v * (dt * omega * np.sin(th1)
                           - np.cos(th1) + np.cos(th)) / (omega * omega)
        # transition in (theta, x, y); the x/y steps depend only on theta
        phi_tr[1, 0] = fy
        phi_tr[2, 0] = -fx
        phi_n[0, 0] = -dt
        phi_n[1, 0] = dfx_dw
        phi_n[2, 0] = dfy_dw
        if v != 0.0:
            phi_n[1, 1] = fx / v
            phi_n[2, 1] = fy / v
        else:
            if abs(omega) < OMEGA_SERIES_EPS:
                phi_n[1, 1] = dt * np.cos(th)
                phi_n[2, 1] = -dt * np.sin(th)
            else:
                phi_n[1, 1] = -(np.sin(th1) - np.sin(th)) / omega
                phi_n[2, 1] = -(np.cos(th1) - np.cos(th)) / omega

        # rates as a function of the intrinsics
        d_int[0, 0] = -wl[i] / base
        d_int[0, 1] = wr[i] / base
        d_int[0, 2] = -omega / base
        d_int[1, 0] = wl[i] / 2.0
        d_int[1, 1] = wr[i] / 2.0
        d_int[1, 2] = 0.0

        # encoder noise mapped to (omega, v)
        q_n[0, 0] = (r_l * r_l + r_r * r_r) / (base * base)
        q_n[0, 1] = (r_r * r_r - r_l * r_l) / (2.0 * base)
        q_n[1, 0] = q_n[0, 1]
        q_n[1, 1] = (r_l * r_l + r_r * r_r) / 4.0

        cov = phi_tr @ cov @ phi_tr.T \
            + (sigma * sigma) * (phi_n @ q_n @ phi_n.T)
        g_int = phi_tr @ g_int + phi_n @ d_int
        z[0] = th1
        z[1] = z[1] + fx
        z[2] = z[2] + fy
    return z, cov, g_int


@dataclass
class WheelPreint:
    """Preintegrated planar motion between two times.

    z = (relative yaw, displacement x, displacement y) expressed in the
    odometry frame at the start time; cov maps encoder noise, G maps
    intrinsics errors.
    """

    t0: float
    t1: float
    z: np.ndarray
    cov: np.ndarray
    G: np.ndarray


def _window_samples(t_enc, wl, wr, t0, t1, max_gap):
    """Encoder samples covering [t0, t1] with interpolated endpoints."""
    t_enc = np.asarray(t_enc, float)
    if np.any(np.diff(t_enc) <= 0):
        raise ValueError("encoder times must be strictly increasing")
    if t0 < t_enc[0] - 1e-9 or t1 > t_enc[-1] + 1e-9:
        raise PropagationGapError("encoder data does not cover the interval")
    ts = np.concatenate([[t0], t_enc[(t_enc > t0) & (t_enc < t1)], [t1]])
    if np.any(np.diff(ts) > max_gap):
        raise PropagationGapError("gap in encoder data exceeds limit")
    wl_s = np.interp(ts, t_enc, wl)
    wr_s = np.interp(ts, t_enc, wr)
    return ts, wl_s, wr_s


def preintegrate(t_enc, wl, wr, t0, t1, intr, sigma, max_gap=0.5):
    """Preintegrate encoder rates over [t0, t1] (encoder clock).

    Parameters
    ----------
    t_enc, wl, wr : arrays
        Encoder timestamps and left/right wheel rates (rad/s).
    t0, t1 : float
        Interval endpoints in the encoder clock.
    intr : (3,) array
        (r_left, r_right, baseline).
    sigma : float
        Per-sample encoder rate noise (rad/s).

    Returns
    -------
    WheelPreint
    """
    if t1 <= t0:
        raise ValueError("empty preintegration interval")
    ts, wl_s, wr_s = _window_samples(t_enc, wl, wr, t0, t1, max_gap)
    dts = np.diff(ts)
    # midpoint rates over each sub-interval (average of the endpoints)
    wl_m = 0.5 * (wl_s[:-1] + wl_s[1:])
    wr_m = 0.5 * (wr_s[:-1] + wr_s[1:])
    z, cov, g = _preint_kernel(wl_m, wr_m, dts, intr[0], intr[1], intr[2],
                               sigma)
    return WheelPreint(t0=t0, t1=t1, z=z, cov=cov, G=g)


def rot2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def compose(a: WheelPreint, b: WheelPreint) -> WheelPreint:
    """Chain two consecutive preintegrated segments."""
    if abs(b.t0 - a.t1) > 1e-9:
        raise ValueError("segments are not consecutive")
    rot = rot2(-a.z[0])
    d2 = rot @ b.z[1:3]
    z = np.array([a.z[0] + b.z[0], a.z[1] + d2[0], a.z[2] + d2[1]])
    j1 = np.eye(3)
    j1[1, 0] = d2[1]
    j1[2, 0] = -d2[0]
    j2 = np.zeros((3, 3))
    j2[0, 0] = 1.0
    j2[1:3, 1:3] = rot
    cov = j1 @ a.cov @ j1.T + j2 @ b.cov @ j2.T
    g = j1 @ a.G + j2 @ b.G
    return WheelPreint(t0=a.t0, t1=b.t1, z=z, cov=cov, G=g)


def predict_relative(state, t_prev, t_new):
    """Predicted planar motion between two clones, with state Jacobians.

    Returns
    -------
    h : (3,) array
    blocks : dict mapping error-state keys to (3, d) rows
    """
    cal = state.wheel
    a = state.clones[t_prev]
    b = state.clones[t_new]
    ca = chains.clone_sensor_pose(a.R, a.p, a.t, a.v, a.omega,
                                  cal.R_imu_to_odo, cal.p_imu_in_odo)
    cb = chains.clone_sensor_pose(b.R, b.p, b.t, b.v, b.omega,
                                  cal.R_imu_to_odo, cal.p_imu_in_odo)
    r_rel = cb.R @ ca.R.T
    phi = so3.log_so3(r_rel)
    d_e = cb.p - ca.p
    h = np.concatenate([[E3 @ phi], LAM @ (ca.R @ d_e)])

    jl_inv = so3.left_jacobian_inv(phi)
    jr_inv = so3.right_jacobian_inv(phi)
    rows_a = np.zeros((3, 6))
    rows_b = np.zeros((3, 6))
    rows_a[0, 0:3] = -(E3 @ jr_inv)
    rows_b[0, 0:3] = E3 @ jl_inv
    rows_a[1:3, 0:3] = -LAM @ so3.skew(ca.R @ d_e)
    rows_a[1:3, 3:6] = -LAM @ ca.R
    rows_b[1:3, 3:6] = LAM @ ca.R
    blocks = {
        ("clone", t_prev): rows_a @ ca.J_clone[0],
        ("clone", t_new): rows_b @ cb.J_clone[0],
    }
    if cal.estimate_extrinsic:
        blocks[("wheel", "ext")] = rows_a @ ca.J_ext + rows_b @ cb.J_ext
    if cal.estimate_time_offset:
        blocks[("wheel", "toff")] = (rows_a @ ca.J_toff
                                     + rows_b @ cb.J_toff)[:, None]
    return h, blocks


def wheel_update(state, preint: WheelPreint, t_prev, t_new, sigma=None,
                 chi2_level=0.95):
    """Apply one preintegrated wheel measurement spanning two clones.

    Returns True when the update was applied, False when gated out.
    """
    cal = state.wheel
    h, blocks = predict_relative(state, t_prev, t_new)
    if cal.estimate_intrinsics:
        blocks[("wheel", "intr")] = -preint.G
    r = preint.z - h
    H = np.zeros((3, state.error_dim))
    for key, rows in blocks.items():
        H[:, state.slice_of(key)] = rows
    cov = preint.cov + NOISE_FLOOR * np.eye(3)
    H, r = ekf.whiten(H, r, cov)
    if not ekf.mahalanobis_gate(state.P, H, r, chi2_level):
        return False
    ekf.ekf_update(state, H, r)
    return True
