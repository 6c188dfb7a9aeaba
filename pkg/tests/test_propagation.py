"""Propagation against a high-accuracy ODE oracle and finite differences."""

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from navfuse import propagation, so3
from navfuse.errors import PropagationGapError
from navfuse.state import NavState

RNG = np.random.default_rng(99)
G = np.array([0.0, 0.0, propagation.GRAVITY])


def random_imu_state(rng):
    R = so3.exp_so3(rng.normal(size=3))
    p = rng.normal(size=3)
    v = rng.normal(size=3)
    bg = rng.normal(size=3) * 0.05
    ba = rng.normal(size=3) * 0.2
    return R, p, v, bg, ba


def ode_oracle(R, p, v, w, a, dt):
    """Integrate the held-input IMU kinematics with solve_ivp at 1e-13."""

    def f(_, y):
        Rm = y[0:9].reshape(3, 3)
        vel = y[12:15]
        dR = -so3.skew(w) @ Rm
        dp = vel
        dv = Rm.T @ a - G
        return np.concatenate([dR.ravel(), dp, dv])

    y0 = np.concatenate([R.ravel(), p, v])
    sol = solve_ivp(f, (0.0, dt), y0, rtol=1e-13, atol=1e-13, method="DOP853")
    y = sol.y[:, -1]
    return y[0:9].reshape(3, 3), y[9:12], y[12:15]


class TestMeanStep:
    def test_matches_ode_oracle(self):
        for _ in range(20):
            R, p, v, bg, ba = random_imu_state(RNG)
            w_m = RNG.normal(size=3) * 2.0
            a_m = RNG.normal(size=3) * 5.0
            dt = 0.02
            R1, p1, v1, _ = propagation.imu_step(R, p, v, bg, ba, w_m, a_m, dt,
                                                 propagation.GRAVITY)
            R2, p2, v2 = ode_oracle(R, p, v, w_m - bg, a_m - ba, dt)
            np.testing.assert_allclose(R1, R2, atol=1e-11)
            np.testing.assert_allclose(p1, p2, atol=1e-11)
            np.testing.assert_allclose(v1, v2, atol=1e-11)

    def test_stationary_equilibrium(self):
        R, p, v, bg, ba = random_imu_state(RNG)
        v = np.zeros(3)
        w_m = bg.copy()
        a_m = R @ G + ba
        R1, p1, v1, _ = propagation.imu_step(R, p, v, bg, ba, w_m, a_m, 0.005,
                                             propagation.GRAVITY)
        np.testing.assert_allclose(R1, R, atol=1e-14)
        np.testing.assert_allclose(p1, p, atol=1e-14)
        np.testing.assert_allclose(v1, np.zeros(3), atol=1e-13)

    def test_zero_rate_pure_acceleration(self):
        # w = 0: p gains a R^T a dt^2/2 exactly
        R = so3.exp_so3(np.array([0.1, -0.2, 0.3]))
        a_m = np.array([1.0, 2.0, 3.0])
        dt = 0.01
        _, p1, v1, _ = propagation.imu_step(
            R, np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3),
            np.zeros(3), a_m, dt, propagation.GRAVITY,
        )
        np.testing.assert_allclose(v1, (R.T @ a_m - G) * dt, atol=1e-14)
        np.testing.assert_allclose(p1, 0.5 * (R.T @ a_m - G) * dt**2, atol=1e-15)


def boxplus_imu(R, p, v, bg, ba, dx):
    return (
        so3.exp_so3(dx[0:3]) @ R,
        p + dx[3:6],
        v + dx[6:9],
        bg + dx[9:12],
        ba + dx[12:15],
    )


def boxminus_imu(a, b):
    """Error of state a relative to b in the left-multiplicative convention."""
    return np.concatenate([
        so3.log_so3(a[0] @ b[0].T),
        a[1] - b[1],
        a[2] - b[2],
        a[3] - b[3],
        a[4] - b[4],
    ])


class TestTransitionJacobian:
    @pytest.mark.parametrize("dt", [0.005, 0.02])
    def test_phi_matches_finite_differences(self, dt):
        eps = 1e-6
        for trial in range(10):
            rng = np.random.default_rng(1000 + trial)
            R, p, v, bg, ba = random_imu_state(rng)
            w_m = rng.normal(size=3) * 2.0
            a_m = rng.normal(size=3) * 5.0
            out = propagation.imu_step(R, p, v, bg, ba, w_m, a_m, dt,
                                       propagation.GRAVITY)
            phi = out[3]
            nominal = (out[0], out[1], out[2], bg, ba)
            fd = np.zeros((15, 15))
            for i in range(15):
                dx = np.zeros(15)
                dx[i] = eps
                sp = boxplus_imu(R, p, v, bg, ba, dx)
                sm = boxplus_imu(R, p, v, bg, ba, -dx)
                op = propagation.imu_step(*sp[0:3], sp[3], sp[4], w_m, a_m, dt,
                                          propagation.GRAVITY)
                om = propagation.imu_step(*sm[0:3], sm[3], sm[4], w_m, a_m, dt,
                                          propagation.GRAVITY)
                plus = (op[0], op[1], op[2], sp[3], sp[4])
                minus = (om[0], om[1], om[2], sm[3], sm[4])
                fd[:, i] = (
                    boxminus_imu(plus, nominal) - boxminus_imu(minus, nominal)
                ) / (2 * eps)
            np.testing.assert_allclose(phi, fd, rtol=1e-5, atol=1e-8)

    def test_batch_phi_composes(self):
        rng = np.random.default_rng(2)
        R, p, v, bg, ba = random_imu_state(rng)
        ts = np.arange(5) * 0.005
        ws = rng.normal(size=(5, 3))
        acs = rng.normal(size=(5, 3)) * 3.0
        sig = np.array([1e-3, 1e-2, 1e-4, 1e-3])
        *_, phi_tot, q = propagation.propagate_batch(
            R, p, v, bg, ba, ts, ws, acs, propagation.GRAVITY, sig
        )
        phi_ref = np.eye(15)
        Ri, pi, vi = R, p, v
        for i in range(4):
            w_m = 0.5 * (ws[i] + ws[i + 1])
            a_m = 0.5 * (acs[i] + acs[i + 1])
            Ri, pi, vi, phi_i = propagation.imu_step(
                Ri, pi, vi, bg, ba, w_m, a_m, 0.005, propagation.GRAVITY
            )
            phi_ref = phi_i @ phi_ref
        np.testing.assert_allclose(phi_tot, phi_ref, atol=1e-12)
        assert np.linalg.eigvalsh(0.5 * (q + q.T)).min() >= 0


class TestSampleSelection:
    def _stream(self):
        times = np.arange(0.0, 1.01, 0.01)
        gyro = np.stack([np.sin(times), np.cos(times), times], axis=1)
        accel = np.stack([times, times**2, np.ones_like(times)], axis=1)
        return times, gyro, accel

    def test_boundaries_interpolated(self):
        times, gyro, accel = self._stream()
        ts, ws, acs = propagation.integration_samples(
            times, gyro, accel, 0.015, 0.045
        )
        assert ts[0] == 0.015 and ts[-1] == 0.045
        np.testing.assert_allclose(ws[0], 0.5 * (gyro[1] + gyro[2]), atol=1e-12)
        np.testing.assert_allclose(acs[-1], 0.5 * (accel[4] + accel[5]), atol=1e-12)
        assert np.all(np.diff(ts) > 0)

    def test_gap_refused(self):
        times, gyro, accel = self._stream()
        keep = (times < 0.3) | (times > 0.45)
        with pytest.raises(PropagationGapError):
            propagation.integration_samples(
                times[keep], gyro[keep], accel[keep], 0.2, 0.6
            )

    def test_uncovered_span_refused(self):
        times, gyro, accel = self._stream()
        with pytest.raises(PropagationGapError):
            propagation.integration_samples(times, gyro, accel, 0.5, 1.5)


class TestStatePropagation:
    def test_clone_cross_covariance_transforms(self):
        s = NavState(t=0.0)
        s.imu.R = so3.exp_so3(np.array([0.1, 0.2, -0.1]))
        s.P = np.eye(15) * 0.01
        s.clone_pose(t=0.0)
        p_before = s.P.copy()
        times = np.arange(0.0, 0.2, 0.005)
        gyro = np.tile([0.1, -0.2, 0.3], (len(times), 1))
        accel = np.tile([0.0, 0.0, 9.81], (len(times), 1))
        sig = np.array([1e-3, 1e-2, 1e-4, 1e-3])
        propagation.propagate(s, times, gyro, accel, 0.1, sig)
        assert s.t == 0.1
        sl = s.slice_of(("clone", 0.0))
        np.testing.assert_array_equal(s.P[sl, sl], p_before[sl, sl])
        assert np.linalg.eigvalsh(s.P).min() > 0
        assert s.P[0, 0] > p_before[0, 0]

    def test_refuses_backwards(self):
        s = NavState(t=1.0)
        with pytest.raises(ValueError):
            propagation.propagate(
                s, np.array([0.9, 1.0, 1.1]), np.zeros((3, 3)),
                np.zeros((3, 3)), 0.5, np.ones(4) * 1e-3
            )
