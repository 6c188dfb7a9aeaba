"""State container: layout, cloning, marginalization, boxplus."""

import numpy as np
import pytest

from navfuse import so3
from navfuse.state import CameraCalib, GnssCalib, NavState, WheelCalib


def make_state():
    s = NavState(t=0.0)
    rng = np.random.default_rng(7)
    s.imu.R = so3.exp_so3(rng.normal(size=3))
    s.imu.p = rng.normal(size=3)
    s.imu.v = rng.normal(size=3)
    s.P = np.eye(15) * 0.1
    return s


class TestLayout:
    def test_imu_only(self):
        s = NavState()
        assert s.error_dim == 15
        assert s.slice_of(("imu",)) == slice(0, 15)

    def test_calib_blocks_follow_flags(self):
        s = make_state()
        s.cameras.append(
            CameraCalib(
                R_imu_to_cam=np.eye(3),
                p_imu_in_cam=np.zeros(3),
                intrinsics=np.array([400.0, 400.0, 320.0, 240.0, 0, 0, 0, 0]),
                estimate_extrinsic=True,
                estimate_time_offset=True,
            )
        )
        s.ensure_calib_layout()
        assert s.error_dim == 15 + 6 + 1
        assert s.has_block(("cam", 0, "ext"))
        assert s.has_block(("cam", 0, "toff"))
        assert not s.has_block(("cam", 0, "intr"))

    def test_clones_append_after_calib(self):
        s = make_state()
        s.wheel = WheelCalib(
            R_imu_to_odo=np.eye(3),
            p_imu_in_odo=np.zeros(3),
            intrinsics=np.array([0.1, 0.1, 0.5]),
            estimate_intrinsics=True,
        )
        s.ensure_calib_layout()
        s.clone_pose(t=0.1)
        s.clone_pose(t=0.2)
        sl1 = s.slice_of(("clone", 0.1))
        sl2 = s.slice_of(("clone", 0.2))
        assert sl1.start == 15 + 3
        assert sl2.start == sl1.stop
        assert s.clone_times() == [0.1, 0.2]


class TestCloning:
    def test_clone_copies_pose_and_covariance(self):
        s = make_state()
        s.P = np.diag(np.arange(1.0, 16.0))
        c = s.clone_pose(t=0.5)
        np.testing.assert_array_equal(c.R, s.imu.R)
        np.testing.assert_array_equal(c.p, s.imu.p)
        sl = s.slice_of(("clone", 0.5))
        np.testing.assert_array_equal(s.P[sl, sl], np.diag(np.arange(1.0, 7.0)))
        np.testing.assert_array_equal(s.P[sl, 0:15], s.P[0:6, 0:15])

    def test_clone_rejects_past_time(self):
        s = make_state()
        s.clone_pose(t=0.5)
        with pytest.raises(ValueError):
            s.clone_pose(t=0.4)

    def test_marginalize_oldest(self):
        s = make_state()
        rng = np.random.default_rng(3)
        for t in (0.1, 0.2, 0.3):
            s.clone_pose(t=t)
        a = rng.normal(size=(s.error_dim, s.error_dim))
        s.P = a @ a.T
        keep = np.ones(s.error_dim, dtype=bool)
        keep[s.slice_of(("clone", 0.1))] = False
        expected = s.P[np.ix_(keep, keep)]
        s.marginalize([("clone", 0.1)])
        assert s.clone_times() == [0.2, 0.3]
        np.testing.assert_array_equal(s.P, expected)


class TestBoxplus:
    def test_imu_on_manifold(self):
        s = make_state()
        dx = np.zeros(15)
        dx[0:3] = [0.01, -0.02, 0.03]
        dx[3:6] = [1.0, 2.0, 3.0]
        r_before = s.imu.R.copy()
        p_before = s.imu.p.copy()
        s.boxplus(dx)
        np.testing.assert_allclose(s.imu.R, so3.exp_so3(dx[0:3]) @ r_before)
        np.testing.assert_allclose(s.imu.p, p_before + dx[3:6])
        np.testing.assert_allclose(s.imu.R @ s.imu.R.T, np.eye(3), atol=1e-12)

    def test_calib_and_clone_blocks(self):
        s = make_state()
        s.gnss.append(GnssCalib(lever_arm=np.array([1.0, 1.0, 1.0]),
                                estimate_lever_arm=True))
        s.ensure_calib_layout()
        s.clone_pose(t=0.1)
        dx = np.zeros(s.error_dim)
        dx[s.slice_of(("gnss", 0, "arm"))] = [0.1, 0.0, -0.1]
        dx[s.slice_of(("clone", 0.1))] = [0.0, 0.0, 0.05, 0.0, 1.0, 0.0]
        r_before = s.clones[0.1].R.copy()
        s.boxplus(dx)
        np.testing.assert_allclose(s.gnss[0].lever_arm, [1.1, 1.0, 0.9])
        np.testing.assert_allclose(
            s.clones[0.1].R, so3.exp_so3(np.array([0, 0, 0.05])) @ r_before
        )
        np.testing.assert_allclose(s.clones[0.1].p[1], s.imu.p[1] + 1.0)
