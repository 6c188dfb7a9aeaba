"""Static and dynamic (wheel-aided) estimator initialization.

The static path averages a short stationary stretch of IMU data. The
dynamic path works while moving: gyro bias falls out of the average
angular-velocity difference between the IMU and the wheel frame, then a
stacked linear system compares first-order IMU velocity integration
against instantaneous wheel velocities to recover the accelerometer
bias and the gravity direction jointly, with the gravity magnitude
enforced as a hard norm constraint (a small trust-region-style secular
equation). No wheel integration is involved, which keeps the problem
linear in everything except the norm constraint.

Both paths return a NavState whose IMU block carries a residual-based
covariance; position is pinned at the origin and yaw is chosen zero in
the local frame (neither is observable at this stage).
"""

from collections import namedtuple

import numpy as np

from . import so3, wheel
from .errors import InitializationError
from .state import NavState

STATIONARY_ACC_VAR = 0.05
STATIONARY_GYRO_VAR = 1e-4
POS_PRIOR_VAR = 1e-8
YAW_PRIOR_VAR = 1e-6
STATIC_VEL_VAR = 1e-4
MOTION_EPS = 1e-3

E1 = np.array([1.0, 0.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])


def is_stationary(omegas, accels):
    """Per-axis sample-variance stationarity check."""
    acc_var = np.var(np.asarray(accels, float), axis=0).max()
    gyr_var = np.var(np.asarray(omegas, float), axis=0).max()
    return acc_var < STATIONARY_ACC_VAR and gyr_var < STATIONARY_GYRO_VAR


def _tilt_map(g_vec, gravity):
    """Linear map from a gravity-vector error to the attitude error."""
    return so3.skew(g_vec) / gravity**2


def static_init(t_imu, omegas, accels, gravity=9.81):
    """Averaging initializer for a stationary platform."""
    omegas = np.asarray(omegas, float)
    accels = np.asarray(accels, float)
    if not is_stationary(omegas, accels):
        raise InitializationError("motion detected; use the dynamic path")
    n = len(omegas)
    bg = omegas.mean(axis=0)
    a_mean = accels.mean(axis=0)
    R0 = so3.gravity_to_rotation(a_mean)
    ba = a_mean - R0 @ (gravity * E3)
    st = NavState(t=float(t_imu[-1]))
    st.imu.R = R0
    st.imu.p = np.zeros(3)
    st.imu.v = np.zeros(3)
    st.imu.bg = bg
    st.imu.ba = ba

    va = np.diag(np.var(accels, axis=0) / max(n, 1))
    vg = np.diag(np.var(omegas, axis=0) / max(n, 1))
    g_hat = R0 @ (gravity * E3)
    norm_a = np.linalg.norm(a_mean)
    T = _tilt_map(g_hat, gravity) * (gravity / max(norm_a, 1e-9))
    P_th = T @ va @ T.T + np.outer(g_hat, g_hat) / gravity**2 * YAW_PRIOR_VAR
    proj = np.eye(3) - (gravity / max(norm_a, 1e-9)) * (
        np.eye(3) - np.outer(a_mean, a_mean) / max(norm_a**2, 1e-18))
    P_ba = proj @ va @ proj.T + 1e-12 * np.eye(3)
    sl = st.slice_of(("imu",))
    P = st.P[sl, sl]
    P[0:3, 0:3] = P_th
    P[3:6, 3:6] = POS_PRIOR_VAR * np.eye(3)
    P[6:9, 6:9] = STATIC_VEL_VAR * np.eye(3)
    P[9:12, 9:12] = vg
    P[12:15, 12:15] = P_ba
    st.P[sl, sl] = P
    return st


def integrate_rotations(t_imu, omegas, bg):
    """Relative rotations C_k mapping frame k to frame 0, held inputs."""
    n = len(t_imu)
    C = np.empty((n, 3, 3))
    C[0] = np.eye(3)
    for i in range(n - 1):
        dt = t_imu[i + 1] - t_imu[i]
        C[i + 1] = C[i] @ so3.exp_so3((omegas[i] - bg) * dt)
    return C


GravityLS = namedtuple("GravityLS", "x1 x2 mu rss lam Q cluster")


def constrained_gravity_ls(A1, A2, b, magnitude, g_prior=None,
                           noise_var=0.0):
    """min ||A1 x1 + A2 x2 - b||^2 subject to ||x2|| = magnitude.

    Eliminates x1, leaving a 3x3 eigenproblem and a secular equation in
    the Lagrange multiplier. Eigendirections that carry no usable
    information (tiny eigenvalue relative to the rest, or an implied
    standard deviation that is a sizeable fraction of the magnitude
    given ``noise_var``) are resolved by the norm constraint instead of
    the data; ``g_prior`` breaks the sign/direction tie there. Planar
    motion always produces one such direction along the rotation axis,
    so this path is routine, not exceptional.

    Returns a GravityLS tuple; ``cluster`` is the boolean mask of
    constraint-resolved eigendirections (columns of Q).
    """
    G1 = A1.T @ A1
    G1i = np.linalg.inv(G1)
    M = A2.T @ A2 - (A2.T @ A1) @ G1i @ (A1.T @ A2)
    c = A2.T @ b - (A2.T @ A1) @ (G1i @ (A1.T @ b))
    lam, Q = np.linalg.eigh(M)
    d = Q.T @ c
    lam_gate = max(1e-8 * lam[-1], noise_var / (0.3 * magnitude) ** 2,
                   1e-14)
    cluster = lam < lam_gate
    d_eff = np.where(cluster, 0.0, d)

    g2 = magnitude**2

    def f(mu):
        keep = ~cluster
        return float(np.sum(d_eff[keep] ** 2 / (lam[keep] + mu) ** 2))

    lo = -lam[0]
    probe = lo + 1e-13 * max(1.0, abs(lo))
    if np.all(cluster) or f(probe) <= g2:
        mu = float(probe)
        x2 = Q @ np.where(cluster, 0.0, d_eff / (lam + mu))
        deficit = np.sqrt(max(g2 - x2 @ x2, 0.0))
        fill = Q[:, cluster] @ (Q[:, cluster].T @ (
            g_prior if g_prior is not None else Q[:, 0]))
        nf = np.linalg.norm(fill)
        fill = fill / nf if nf > 1e-12 else Q[:, 0]
        x2 = x2 + deficit * fill
    else:
        hi = lo + np.linalg.norm(d_eff) / magnitude + 1e-12
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if f(mid) > g2:
                lo = mid
            else:
                hi = mid
        mu = float(0.5 * (lo + hi))
        x2 = Q @ (d_eff / (lam + mu))
    nrm = np.linalg.norm(x2)
    if nrm > 1e-12:
        x2 = x2 * (magnitude / nrm)
    x1 = G1i @ (A1.T @ (b - A2 @ x2))
    r = A1 @ x1 + A2 @ x2 - b
    return GravityLS(x1, x2, mu, float(r @ r), lam, Q, cluster)


def dynamic_init(t_imu, omegas, accels, t_wheel, wl, wr, calib,
                 sigma_g=0.0, sigma_a=0.0, sigma_w=0.0, gravity=9.81):
    """Wheel-aided initialization while in motion.

    Parameters
    ----------
    t_imu, omegas, accels : IMU stamps and samples (held over each gap).
    t_wheel, wl, wr : encoder stamps and left/right wheel rates (rad/s).
    calib : WheelCalib with extrinsics (R_imu_to_odo, p_imu_in_odo) and
        intrinsics (r_left, r_right, base).
    sigma_g, sigma_a, sigma_w : per-sample noise stds used only for the
        reported covariance (zero means noiseless bookkeeping).

    Returns a NavState at the first IMU stamp. Raises
    InitializationError when the platform is not actually moving and
    not stationary either, or when the data cannot support a solve.
    """
    t_imu = np.asarray(t_imu, float)
    omegas = np.asarray(omegas, float)
    accels = np.asarray(accels, float)
    n = len(t_imu)
    if n < 3:
        raise InitializationError("not enough IMU samples")
    r_l, r_r, base = (float(x) for x in calib.intrinsics)
    w_o_raw, v_o_raw = wheel.body_rates(np.asarray(wl, float),
                                        np.asarray(wr, float),
                                        (r_l, r_r, base))
    w_o = np.interp(t_imu, t_wheel, w_o_raw)
    v_o = np.interp(t_imu, t_wheel, v_o_raw)
    if np.abs(v_o).max() < MOTION_EPS and np.abs(w_o).max() < MOTION_EPS:
        if is_stationary(omegas, accels):
            return static_init(t_imu, omegas, accels, gravity)
        raise InitializationError("wheel reports no motion on a moving rig")

    R_oi = calib.R_imu_to_odo.T
    p_io = calib.p_imu_in_odo
    bg = omegas.mean(axis=0) - R_oi @ (E3 * w_o.mean())
    C = integrate_rotations(t_imu, omegas, bg)

    arm = np.cross(E3, p_io)
    u = np.einsum("kij,kj->ki", C, (v_o[:, None] * E1 + w_o[:, None] * arm)
                  @ R_oi.T)
    v_i0 = u[0]

    dts = np.diff(t_imu)
    S1 = np.zeros((n, 3, 3))
    Sa = np.zeros((n, 3))
    for i in range(n - 1):
        S1[i + 1] = S1[i] + C[i] * dts[i]
        Sa[i + 1] = Sa[i] + (C[i] @ accels[i]) * dts[i]
    tk = t_imu - t_imu[0]

    m = 3 * (n - 1)
    A1 = np.zeros((m, 3))
    A2 = np.zeros((m, 3))
    b = np.zeros(m)
    for k in range(1, n):
        sl = slice(3 * (k - 1), 3 * k)
        A1[sl] = -S1[k]
        A2[sl] = -tk[k] * np.eye(3)
        b[sl] = u[k] - v_i0 - Sa[k]

    # wheel-noise covariance of an instantaneous wheel velocity
    sig_v2 = sigma_w**2 * (r_l**2 + r_r**2) / 4.0
    sig_w2 = sigma_w**2 * (r_l**2 + r_r**2) / base**2
    V0 = R_oi @ (sig_v2 * np.outer(E1, E1)
                 + sig_w2 * np.outer(arm, arm)) @ R_oi.T

    # the sign of gravity along any constraint-resolved direction comes
    # from the mean specific force, which gravity dominates
    g_prior = accels.mean(axis=0)
    g_prior = gravity * g_prior / max(np.linalg.norm(g_prior), 1e-9)
    x_free = np.linalg.lstsq(np.hstack([A1, A2]), b, rcond=None)[0]
    rss0 = float(np.sum((A1 @ x_free[:3] + A2 @ x_free[3:] - b) ** 2))
    sig0 = rss0 / max(m - 6, 1)
    sol = constrained_gravity_ls(A1, A2, b, gravity, g_prior=g_prior,
                                 noise_var=sig0)
    ba, g0 = sol.x1, sol.x2

    R0 = so3.gravity_to_rotation(g0)
    v_w = R0.T @ v_i0

    H = np.zeros((6, 6))
    H[0:3, 0:3] = A1.T @ A1
    H[0:3, 3:6] = A1.T @ A2
    H[3:6, 0:3] = H[0:3, 3:6].T
    H[3:6, 3:6] = A2.T @ A2 + max(sol.mu, 0.0) * np.eye(3)
    # constraint-resolved directions carry no data curvature; stiffen
    # them for the inverse, then restore honest variances afterwards
    rho = 10.0 * (np.trace(A1.T @ A1) / 3.0 + sol.lam[-1] + 1e-12)
    for i in np.flatnonzero(sol.cluster):
        q = sol.Q[:, i]
        H[3:6, 3:6] += rho * np.outer(q, q)
    try:
        Hi = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        raise InitializationError("singular normal equations")
    K = Hi @ np.hstack([A1, A2]).T

    if sigma_g > 0.0 or sigma_a > 0.0 or sigma_w > 0.0:
        # propagate every noise source through the whole pipeline,
        # including the gyro random walk inside the integrated
        # rotations and the row-to-row correlation it induces
        nv = 8 * n
        dvar = np.concatenate([
            np.full(3 * n, sigma_g**2), np.full(3 * n, sigma_a**2),
            np.full(n, sig_v2), np.full(n, sig_w2)])

        def wcol(k):
            return 6 * n + k

        B_bg = np.zeros((3, nv))
        for i in range(n):
            B_bg[:, 3 * i:3 * i + 3] = np.eye(3) / n
            B_bg[:, 7 * n + i] = -(R_oi @ E3) / n
        psi = np.zeros((n, 3, nv))
        for i in range(n - 1):
            psi[i + 1] = psi[i] - C[i + 1] @ B_bg * dts[i]
            psi[i + 1, :, 3 * i:3 * i + 3] += C[i + 1] * dts[i]
        B_u = np.zeros((n, 3, nv))
        for k in range(n):
            B_u[k] = -so3.skew(u[k]) @ psi[k]
            B_u[k, :, wcol(k)] += C[k] @ (R_oi @ E1)
            B_u[k, :, 7 * n + k] += C[k] @ (R_oi @ arm)
        B_m = np.zeros((m, nv))
        acc = np.zeros((3, nv))
        for k in range(1, n):
            i = k - 1
            acc = acc - dts[i] * (
                so3.skew(C[i] @ (accels[i] - ba)) @ psi[i])
            acc[:, 3 * n + 3 * i:3 * n + 3 * i + 3] += C[i] * dts[i]
            B_m[3 * (k - 1):3 * k] = B_u[k] - B_u[0] - acc
        B_x = K @ B_m
        cov6 = (B_x * dvar) @ B_x.T
        cov_bg = (B_bg * dvar) @ B_bg.T
        cross_x_bg = (B_x * dvar) @ B_bg.T
        V_u0 = (B_u[0] * dvar) @ B_u[0].T
        cross_g_u0 = (B_x[3:6] * dvar) @ B_u[0].T
    else:
        sig2 = sol.rss / max(m - 5, 1)
        cov6 = sig2 * (K @ K.T)
        cov_bg = np.zeros((3, 3))
        cross_x_bg = np.zeros((6, 3))
        V_u0 = V0
        cross_g_u0 = np.zeros((3, 3))
    cov_ba = cov6[0:3, 0:3]
    cov_g = cov6[3:6, 3:6]
    cross_g_ba = cov6[3:6, 0:3]
    cross_g_bg = cross_x_bg[3:6]
    if np.any(sol.cluster):
        Qc = sol.Q[:, sol.cluster]
        Pc = Qc @ Qc.T
        r_in = Pc @ (g0 / gravity)
        nr = np.linalg.norm(r_in)
        if nr > 0.3:
            # the radial part of the span is resolved by the norm
            # constraint: errors elsewhere leak in along the sphere
            q = r_in / nr
            g_q = float(q @ g0)
            j = -(g0 - q * g_q) / g_q
            L = np.eye(3) - np.outer(q, q) + np.outer(q, j)
            cov_g = L @ cov_g @ L.T
            cross_g_ba = L @ cross_g_ba
            cross_g_bg = L @ cross_g_bg
            cross_g_u0 = L @ cross_g_u0
            Pc = Pc - np.outer(q, q)
        # any tangential remainder was resolved only by the prior
        w_t, V_t = np.linalg.eigh(Pc)
        for i in np.flatnonzero(w_t > 0.5):
            cov_g = cov_g + (0.05 * gravity) ** 2 * np.outer(
                V_t[:, i], V_t[:, i])

    T = _tilt_map(g0, gravity)
    P_th = T @ cov_g @ T.T + np.outer(g0, g0) / gravity**2 * YAW_PRIOR_VAR
    X = so3.skew(v_i0) @ (T @ cross_g_u0)
    P_v_i = (V_u0 + so3.skew(v_i0) @ P_th @ so3.skew(v_i0).T
             + X + X.T)

    st = NavState(t=float(t_imu[0]))
    st.imu.R = R0
    st.imu.p = np.zeros(3)
    st.imu.v = v_w
    st.imu.bg = bg
    st.imu.ba = ba
    sl = st.slice_of(("imu",))
    P = st.P[sl, sl]
    P[0:3, 0:3] = P_th
    P[3:6, 3:6] = POS_PRIOR_VAR * np.eye(3)
    P[6:9, 6:9] = R0.T @ P_v_i @ R0 + 1e-14 * np.eye(3)
    P[9:12, 9:12] = cov_bg + 1e-14 * np.eye(3)
    P[12:15, 12:15] = cov_ba + 1e-14 * np.eye(3)
    P[0:3, 12:15] = T @ cross_g_ba
    P[12:15, 0:3] = P[0:3, 12:15].T
    P[0:3, 9:12] = T @ cross_g_bg
    P[9:12, 0:3] = P[0:3, 9:12].T
    P[12:15, 9:12] = cross_x_bg[0:3]
    P[9:12, 12:15] = P[12:15, 9:12].T
    st.P[sl, sl] = 0.5 * (P + P.T)
    return st
