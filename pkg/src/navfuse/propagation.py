"""IMU mean and covariance propagation.

Between measurement samples the IMU inputs are held constant (the average of
the bracketing samples), under which the attitude/velocity/position flow has
a closed form: with w = gyro - bg, a = acc - ba, the rotation advances by
Exp(-w dt) and the velocity/position integrals reduce to the standard
Gamma-series matrices

    Gamma_1(t) = sum_k skew(t)^k / (k+1)!   (= left Jacobian)
    Gamma_2(t) = sum_k skew(t)^k / (k+2)!

so the per-step map is exact for the held inputs (a documented >=2nd-order
equivalent of RK4). The error-state transition Phi of that map is computed
analytically; the two gyro-bias sensitivity blocks are smooth integrals

    N_v = int_0^dt s       Exp(w s) skew(a) J_r(w s) ds
    N_p = int_0^dt (dt-s) s Exp(w s) skew(a) J_r(w s) ds

evaluated with 5-point Gauss-Legendre quadrature (error far below 1e-12 at
IMU rates), so Phi matches finite differences of the mean map to machine
noise. Per-step process noise uses the trapezoidal discretization
Qd = (G Qc G^T + Phi G Qc G^T Phi^T) dt / 2.

The state covariance is touched once per :func:`propagate` call: per-sample
Phi and Qd are accumulated over the whole batch and applied to the joint
covariance in a single pass.
"""

from __future__ import annotations

import numpy as np

from .accel import jit
from .errors import PropagationGapError
from .so3 import exp_so3, left_jacobian, right_jacobian, skew
from .state import NavState

__all__ = [
    "GRAVITY",
    "gamma2",
    "imu_step",
    "propagate_batch",
    "integration_samples",
    "propagate",
]

GRAVITY = 9.81

# 5-point Gauss-Legendre nodes/weights on [-1, 1]
_GL_X = np.array(
    [
        -0.9061798459386640,
        -0.5384693101056831,
        0.0,
        0.5384693101056831,
        0.9061798459386640,
    ]
)
_GL_W = np.array(
    [
        0.2369268850561891,
        0.4786286704993665,
        0.5688888888888889,
        0.4786286704993665,
        0.2369268850561891,
    ]
)


@jit
def gamma2(theta):
    """Gamma_2(theta) = sum_k skew(theta)^k / (k+2)!."""
    t2 = theta[0] * theta[0] + theta[1] * theta[1] + theta[2] * theta[2]
    k = skew(theta)
    if t2 < 1e-4:  # quartic cancellation in the closed form: use the series
        c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0
    else:
        t = np.sqrt(t2)
        c1 = (t - np.sin(t)) / (t2 * t)
        c2 = (np.cos(t) - 1.0 + 0.5 * t2) / (t2 * t2)
    return 0.5 * np.eye(3) + c1 * k + c2 * (k @ k)


@jit
def imu_step(R, p, v, bg, ba, w_m, a_m, dt, gravity):
    """One held-input step; returns (R', p', v', Phi).

    State error order: (theta, p, v, bg, ba), left-multiplicative attitude
    error R = Exp(theta) R_hat with R global-to-local.
    """
    w = w_m - bg
    a = a_m - ba
    g = np.zeros(3)
    g[2] = gravity

    wdt = w * dt
    delta = exp_so3(-wdt)
    j1 = left_jacobian(wdt)
    g2 = gamma2(wdt)
    Rt = R.T

    R_new = delta @ R
    v_new = v + (Rt @ (j1 @ a)) * dt - g * dt
    p_new = p + v * dt - 0.5 * g * dt * dt + (Rt @ (g2 @ a)) * (dt * dt)

    # bias sensitivity integrals by Gauss-Legendre quadrature
    n_v = np.zeros((3, 3))
    n_p = np.zeros((3, 3))
    sk_a = skew(a)
    for i in range(5):
        s = 0.5 * dt * (1.0 + _GL_X[i])
        wgt = 0.5 * dt * _GL_W[i]
        ws = w * s
        m = exp_so3(ws) @ (sk_a @ right_jacobian(ws))
        n_v = n_v + (wgt * s) * m
        n_p = n_p + (wgt * s * (dt - s)) * m

    phi = np.eye(15)
    phi[0:3, 0:3] = delta
    phi[0:3, 9:12] = dt * right_jacobian(wdt)
    phi[3:6, 0:3] = Rt @ skew(g2 @ a) * (dt * dt)
    phi[3:6, 6:9] = dt * np.eye(3)
    phi[3:6, 9:12] = Rt @ n_p
    phi[3:6, 12:15] = -(dt * dt) * (Rt @ g2)
    phi[6:9, 0:3] = Rt @ skew(j1 @ a) * dt
    phi[6:9, 9:12] = Rt @ n_v
    phi[6:9, 12:15] = -dt * (Rt @ j1)
    return R_new, p_new, v_new, phi


@jit
def propagate_batch(R, p, v, bg, ba, ts, ws, acs, gravity, sig):
    """Integrate a sample batch; accumulate total Phi and discrete noise.

    ``ts/ws/acs`` are integration samples covering the span (boundary
    samples already interpolated); each interval holds the average of its
    endpoint samples. ``sig`` = (gyro noise, accel noise, gyro walk,
    accel walk) continuous-time densities.
    """
    n = len(ts)
    phi_tot = np.eye(15)
    q_tot = np.zeros((15, 15))
    q0 = np.zeros((15, 15))
    for i in range(3):
        q0[i, i] = sig[0] * sig[0]
        q0[6 + i, 6 + i] = sig[1] * sig[1]
        q0[9 + i, 9 + i] = sig[2] * sig[2]
        q0[12 + i, 12 + i] = sig[3] * sig[3]
    for i in range(n - 1):
        dt = ts[i + 1] - ts[i]
        if dt <= 0.0:
            continue
        w_m = 0.5 * (ws[i] + ws[i + 1])
        a_m = 0.5 * (acs[i] + acs[i + 1])
        R, p, v, phi = imu_step(R, p, v, bg, ba, w_m, a_m, dt, gravity)
        qd = 0.5 * dt * (q0 + phi @ q0 @ phi.T)
        phi_tot = phi @ phi_tot
        q_tot = phi @ q_tot @ phi.T + qd
    return R, p, v, phi_tot, q_tot


def integration_samples(
    times: np.ndarray,
    gyro: np.ndarray,
    accel: np.ndarray,
    t0: float,
    t1: float,
    max_gap: float = 0.1,
):
    """Select/interpolate IMU samples so they exactly cover [t0, t1].

    Boundary samples are linearly interpolated in measurement space.
    Raises :class:`PropagationGapError` when the stream does not bracket
    the span or has an internal gap larger than ``max_gap``.
    """
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    times = np.asarray(times, float)
    if times.size < 2 or times[0] > t0 + 1e-12 or times[-1] < t1 - 1e-12:
        raise PropagationGapError("IMU stream does not bracket the span")
    if np.any(np.diff(times) <= 0):
        raise ValueError("IMU sample times must be strictly increasing")

    i0 = int(np.searchsorted(times, t0, side="right")) - 1
    i1 = int(np.searchsorted(times, t1, side="left"))
    seg_t = times[i0 : i1 + 1]
    if np.any(np.diff(seg_t) > max_gap):
        raise PropagationGapError("IMU stream has a gap larger than max_gap")

    def lerp(t):
        j = int(np.searchsorted(times, t, side="right")) - 1
        j = min(max(j, 0), len(times) - 2)
        lam = (t - times[j]) / (times[j + 1] - times[j])
        return (
            (1 - lam) * gyro[j] + lam * gyro[j + 1],
            (1 - lam) * accel[j] + lam * accel[j + 1],
        )

    inner = (times > t0 + 1e-12) & (times < t1 - 1e-12)
    ts = [t0]
    ws = [lerp(t0)[0]]
    acs = [lerp(t0)[1]]
    for t, w, a in zip(times[inner], gyro[inner], accel[inner]):
        ts.append(t)
        ws.append(w)
        acs.append(a)
    if t1 > t0:
        w1, a1 = lerp(t1)
        ts.append(t1)
        ws.append(w1)
        acs.append(a1)
    return np.array(ts), np.array(ws, float), np.array(acs, float)


def propagate(
    state: NavState,
    times: np.ndarray,
    gyro: np.ndarray,
    accel: np.ndarray,
    t_target: float,
    sigmas: np.ndarray,
    gravity: float = GRAVITY,
    max_gap: float = 0.1,
) -> None:
    """Propagate the state (and joint covariance, once) to ``t_target``."""
    if t_target < state.t:
        raise ValueError("cannot propagate backwards")
    if t_target == state.t:
        return
    ts, ws, acs = integration_samples(
        times, gyro, accel, state.t, t_target, max_gap=max_gap
    )
    imu = state.imu
    R, p, v, phi, q = propagate_batch(
        imu.R, imu.p, imu.v, imu.bg, imu.ba, ts, ws, acs, gravity,
        np.asarray(sigmas, float),
    )
    imu.R, imu.p, imu.v = R, p, v
    state.t = float(t_target)
    P = state.P
    P[0:15, :] = phi @ P[0:15, :]
    P[:, 0:15] = P[:, 0:15] @ phi.T
    P[0:15, 0:15] += q
    state.P = 0.5 * (P + P.T)
