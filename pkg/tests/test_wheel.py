"""Wheel odometry tests: preintegration, composition, noise, update rows."""

import numpy as np
import pytest

from navfuse import so3, wheel
from navfuse.errors import PropagationGapError
from navfuse.state import NavState, WheelCalib

INTR = np.array([0.16, 0.155, 0.55])


def smooth_profile(rng, n=40, hz=100.0):
    """Random smooth encoder-rate profile (sum of low-frequency sinusoids)."""
    t = np.arange(n) / hz
    def channel():
        out = np.full(n, rng.uniform(-2.0, 6.0))
        for _ in range(3):
            out = out + rng.uniform(-2, 2) * np.sin(
                2 * np.pi * rng.uniform(0.2, 2.0) * t + rng.uniform(0, 7))
        return out
    return t, channel(), channel()


def rk4_oracle(wl_m, wr_m, dts, intr, substeps=1000):
    """Integrate the planar kinematics with RK4 at a much finer step.

    Uses the same piecewise-constant rates as the preintegration kernel, so
    the two must agree to integration accuracy.
    """
    th, x, y = 0.0, 0.0, 0.0
    for wl, wr, dt in zip(wl_m, wr_m, dts):
        om, v = wheel.body_rates(wl, wr, intr)
        h = dt / substeps
        def f(s):
            return np.array([-om, v * np.cos(s[0]), -v * np.sin(s[0])])
        s = np.array([th, x, y])
        for _ in range(substeps):
            k1 = f(s)
            k2 = f(s + 0.5 * h * k1)
            k3 = f(s + 0.5 * h * k2)
            k4 = f(s + h * k3)
            s = s + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        th, x, y = s
    return np.array([th, x, y])


def kernel_inputs(rng, n=40, hz=100.0):
    t, wl, wr = smooth_profile(rng, n, hz)
    dts = np.diff(t)
    wl_m = 0.5 * (wl[:-1] + wl[1:])
    wr_m = 0.5 * (wr[:-1] + wr[1:])
    return wl_m, wr_m, dts


class TestPreintegration:
    def test_straight_line(self):
        n = 11
        wl = np.full(n, 2.0)
        wr = np.full(n, 2.0 * INTR[0] / INTR[1])  # equal rim speeds
        t = np.arange(n) * 0.01
        out = wheel.preintegrate(t, wl, wr, 0.0, 0.1, INTR, sigma=0.0)
        v = 2.0 * INTR[0]
        np.testing.assert_allclose(out.z, [0.0, v * 0.1, 0.0], atol=1e-12)

    def test_pure_rotation(self):
        n = 11
        wl = np.full(n, -1.0)
        wr = np.full(n, INTR[0] / INTR[1])
        t = np.arange(n) * 0.01
        out = wheel.preintegrate(t, wl, wr, 0.0, 0.1, INTR, sigma=0.0)
        om = 2.0 * INTR[0] / INTR[2]
        np.testing.assert_allclose(out.z, [-om * 0.1, 0.0, 0.0], atol=1e-12)

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_substepped_integration(self, seed):
        rng = np.random.default_rng(seed)
        wl_m, wr_m, dts = kernel_inputs(rng)
        z, _, _ = wheel._preint_kernel(wl_m, wr_m, dts, INTR[0], INTR[1],
                                       INTR[2], 0.0)
        ref = rk4_oracle(wl_m, wr_m, dts, INTR, substeps=1000)
        np.testing.assert_allclose(z, ref, atol=1e-8)

    def test_near_zero_rate_series_branch(self):
        # rates straddling the series threshold must agree with the arc form
        dts = np.full(5, 0.01)
        wl = np.full(5, 3.0)
        for scale in [1e-7, 1e-6, 2e-6]:
            wr = (wl * INTR[0] + np.full(5, scale * INTR[2])) / INTR[1]
            z, _, _ = wheel._preint_kernel(wl, wr, dts, INTR[0], INTR[1],
                                           INTR[2], 0.0)
            ref = rk4_oracle(wl, wr, dts, INTR, substeps=200)
            np.testing.assert_allclose(z, ref, atol=1e-10)

    def test_gap_and_coverage_errors(self):
        t = np.array([0.0, 0.01, 0.6])
        w = np.ones(3)
        with pytest.raises(PropagationGapError):
            wheel.preintegrate(t, w, w, 0.0, 0.6, INTR, 0.0, max_gap=0.5)
        with pytest.raises(PropagationGapError):
            wheel.preintegrate(t[:2], w[:2], w[:2], 0.0, 0.2, INTR, 0.0)


class TestComposition:
    @pytest.mark.parametrize("seed", range(10))
    def test_split_equals_whole(self, seed):
        rng = np.random.default_rng(100 + seed)
        t, wl, wr = smooth_profile(rng)
        t0, t1 = t[0], t[-1]
        tm = t[rng.integers(5, 35)]
        whole = wheel.preintegrate(t, wl, wr, t0, t1, INTR, sigma=1e-2)
        p1 = wheel.preintegrate(t, wl, wr, t0, tm, INTR, sigma=1e-2)
        p2 = wheel.preintegrate(t, wl, wr, tm, t1, INTR, sigma=1e-2)
        comp = wheel.compose(p1, p2)
        np.testing.assert_allclose(comp.z, whole.z, atol=1e-9)
        scale = np.abs(whole.cov).max()
        np.testing.assert_allclose(comp.cov, whole.cov, atol=1e-12 * scale)
        np.testing.assert_allclose(comp.G, whole.G,
                                   atol=1e-12 * np.abs(whole.G).max())

    def test_rejects_non_consecutive(self):
        rng = np.random.default_rng(3)
        t, wl, wr = smooth_profile(rng)
        p1 = wheel.preintegrate(t, wl, wr, t[0], t[10], INTR, 0.0)
        p2 = wheel.preintegrate(t, wl, wr, t[20], t[30], INTR, 0.0)
        with pytest.raises(ValueError):
            wheel.compose(p1, p2)


class TestPreintJacobians:
    @pytest.mark.parametrize("seed", range(5))
    def test_intrinsics_jacobian_matches_fd(self, seed):
        rng = np.random.default_rng(200 + seed)
        wl_m, wr_m, dts = kernel_inputs(rng)
        _, _, G = wheel._preint_kernel(wl_m, wr_m, dts, INTR[0], INTR[1],
                                       INTR[2], 0.0)
        eps = 1e-7
        for i in range(3):
            d = np.zeros(3)
            d[i] = eps
            ip, im = INTR + d, INTR - d
            zp, _, _ = wheel._preint_kernel(wl_m, wr_m, dts, ip[0], ip[1],
                                            ip[2], 0.0)
            zm, _, _ = wheel._preint_kernel(wl_m, wr_m, dts, im[0], im[1],
                                            im[2], 0.0)
            np.testing.assert_allclose(G[:, i], (zp - zm) / (2 * eps),
                                       rtol=1e-5, atol=1e-7)

    @pytest.mark.parametrize("seed", range(5))
    def test_noise_covariance_matches_fd_accumulation(self, seed):
        rng = np.random.default_rng(300 + seed)
        wl_m, wr_m, dts = kernel_inputs(rng, n=15)
        sigma = 1e-2
        _, cov, _ = wheel._preint_kernel(wl_m, wr_m, dts, INTR[0], INTR[1],
                                         INTR[2], sigma)
        eps = 1e-6
        expect = np.zeros((3, 3))
        for i in range(len(dts)):
            E = np.zeros((3, 2))
            for c, arr in enumerate((wl_m, wr_m)):
                ap, am = arr.copy(), arr.copy()
                ap[i] += eps
                am[i] -= eps
                args = (ap if c == 0 else wl_m, ap if c == 1 else wr_m)
                zp, _, _ = wheel._preint_kernel(args[0], args[1], dts,
                                                INTR[0], INTR[1], INTR[2], 0.0)
                args = (am if c == 0 else wl_m, am if c == 1 else wr_m)
                zm, _, _ = wheel._preint_kernel(args[0], args[1], dts,
                                                INTR[0], INTR[1], INTR[2], 0.0)
                E[:, c] = (zp - zm) / (2 * eps)
            expect += sigma ** 2 * (E @ E.T)
        np.testing.assert_allclose(cov, expect,
                                   atol=1e-6 * np.abs(expect).max())


def make_wheel_state(rng, estimate_all=True):
    st = NavState(t=0.1)
    st.wheel = WheelCalib(
        R_imu_to_odo=so3.exp_so3(np.array([0.02, -0.01, 0.3])),
        p_imu_in_odo=np.array([0.1, -0.05, 0.2]),
        intrinsics=INTR.copy(),
        estimate_extrinsic=estimate_all,
        estimate_intrinsics=estimate_all,
        estimate_time_offset=estimate_all,
    )
    st.ensure_calib_layout()
    for t in (0.0, 0.1):
        st.imu.R = so3.exp_so3(rng.normal(size=3) * 0.4)
        st.imu.p = rng.normal(size=3)
        st.clone_pose(t, v=rng.normal(size=3), omega=rng.normal(size=3) * 0.5)
    st.P = np.eye(st.error_dim) * 1e-4
    return st


class TestUpdateRows:
    def test_pose_and_extrinsic_blocks_match_fd(self):
        rng = np.random.default_rng(7)
        st = make_wheel_state(rng)
        h0, blocks = wheel.predict_relative(st, 0.0, 0.1)
        eps = 1e-6
        for key in [("clone", 0.0), ("clone", 0.1), ("wheel", "ext")]:
            sl = st.slice_of(key)
            width = sl.stop - sl.start
            fd = np.zeros((3, width))
            for i in range(width):
                d = np.zeros(st.error_dim)
                d[sl.start + i] = eps
                sp, sm = st.copy(), st.copy()
                sp.boxplus(d)
                sm.boxplus(-d)
                hp, _ = wheel.predict_relative(sp, 0.0, 0.1)
                hm, _ = wheel.predict_relative(sm, 0.0, 0.1)
                fd[:, i] = (hp - hm) / (2 * eps)
            np.testing.assert_allclose(blocks[key], fd, rtol=1e-5, atol=1e-7)

    def test_time_offset_column_against_shifted_motion(self):
        # move both clones along their constant-rate motion; the predicted
        # relative measurement differentiates to the time-offset column
        rng = np.random.default_rng(8)
        st = make_wheel_state(rng)
        _, blocks = wheel.predict_relative(st, 0.0, 0.1)
        eps = 1e-6

        def shifted(dt):
            s = st.copy()
            for t in (0.0, 0.1):
                c = s.clones[t]
                c.R = so3.exp_so3(-c.omega * dt) @ c.R
                c.p = c.p + c.v * dt
            return wheel.predict_relative(s, 0.0, 0.1)[0]

        fd = (shifted(eps) - shifted(-eps)) / (2 * eps)
        np.testing.assert_allclose(blocks[("wheel", "toff")][:, 0], fd,
                                   rtol=1e-5, atol=1e-7)

    def test_update_corrects_clone_and_gates_outliers(self):
        rng = np.random.default_rng(9)
        st = make_wheel_state(rng, estimate_all=False)
        truth = st.copy()
        h_true, _ = wheel.predict_relative(truth, 0.0, 0.1)
        pre = wheel.WheelPreint(t0=0.0, t1=0.1, z=h_true,
                                cov=np.eye(3) * 1e-8, G=np.zeros((3, 3)))
        sl = st.slice_of(("clone", 0.1))
        d = np.zeros(st.error_dim)
        d[sl] = rng.normal(size=6) * 0.01
        st.boxplus(d)
        h_before, _ = wheel.predict_relative(st, 0.0, 0.1)
        assert wheel.wheel_update(st, pre, 0.0, 0.1)
        h_after, _ = wheel.predict_relative(st, 0.0, 0.1)
        assert np.linalg.norm(h_after - h_true) < \
            0.2 * np.linalg.norm(h_before - h_true)

        bad = wheel.WheelPreint(t0=0.0, t1=0.1, z=h_true + np.array(
            [0.5, 1.0, -1.0]), cov=np.eye(3) * 1e-8, G=np.zeros((3, 3)))
        assert not wheel.wheel_update(st, bad, 0.0, 0.1)
