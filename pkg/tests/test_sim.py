"""Simulator invariants: determinism, kinematic consistency, closed loop."""

import numpy as np
import numpy.testing as npt
import pytest

from navfuse import so3
from navfuse.config import (Config, TrajectoryConfig, default_config,
                            from_dict, to_dict)
from navfuse.errors import ConfigError
from navfuse.sim import Trajectory, build_world, ray_exit, simulate
from navfuse.sim.sensors import stream_rng


def circle_waypoints(duration=20.0, radius=7.0, period=30.0, z=0.0,
                     spacing=1.5, pad=0.5):
    t = np.arange(-pad, duration + 2 * pad + spacing, spacing)
    ang = 2 * np.pi * t / period
    wp = np.column_stack([t, radius * np.cos(ang), radius * np.sin(ang),
                          np.full_like(t, z), np.zeros_like(t)])
    return wp


def wavy_waypoints(duration=20.0, spacing=1.0, pad=0.5):
    """3D waypoints with independent yaw/pitch/roll columns."""
    t = np.arange(-pad, duration + 2 * pad + spacing, spacing)
    x = 6.0 * np.cos(2 * np.pi * t / 25.0)
    y = 6.0 * np.sin(2 * np.pi * t / 25.0)
    z = 1.0 + 0.8 * np.sin(2 * np.pi * t / 11.0)
    yaw = 2 * np.pi * t / 25.0 + 0.3 * np.sin(t)
    pitch = 0.25 * np.sin(0.9 * t + 0.4)
    roll = 0.2 * np.sin(1.3 * t + 1.1)
    return np.column_stack([t, x, y, z, yaw, pitch, roll])


def small_config(duration=4.0, **kw):
    cfg = default_config(waypoints=circle_waypoints(duration))
    cfg.duration = duration
    cfg.world.n_landmarks = 150
    for lc in cfg.lidars:
        lc.n_points = 40
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


class TestTrajectory:
    @pytest.mark.parametrize("mode,wp_fn", [
        ("heading", circle_waypoints),
        ("spline", wavy_waypoints),
    ])
    def test_derivatives_match_finite_differences(self, mode, wp_fn):
        traj = Trajectory(wp_fn(), yaw_mode=mode)
        # stay clear of spline knots, where jerk is discontinuous and a
        # straddling central difference measures a one-sided average
        ts = 0.513 + 0.25 * np.arange(57)
        h = 1e-4
        v_fd = (traj.position(ts + h) - traj.position(ts - h)) / (2 * h)
        npt.assert_allclose(traj.velocity(ts), v_fd, atol=1e-6)
        a_fd = (traj.velocity(ts + h) - traj.velocity(ts - h)) / (2 * h)
        npt.assert_allclose(traj.acceleration(ts), a_fd, atol=1e-6)
        # skew(omega) = R_ItoW^T d/dt R_ItoW
        for t in ts[::7]:
            r0 = traj.rotation(t - h).T
            r1 = traj.rotation(t + h).T
            rdot = (r1 - r0) / (2 * h)
            w_fd = so3.vee(traj.rotation(t) @ rdot)
            npt.assert_allclose(traj.omega(t), w_fd, atol=1e-6)

    def test_heading_mode_is_nonholonomic(self):
        traj = Trajectory(circle_waypoints(), yaw_mode="heading")
        ts = np.linspace(0.0, 15.0, 50)
        v_body = np.einsum("kij,kj->ki", traj.rotation(ts),
                           traj.velocity(ts))
        npt.assert_allclose(v_body[:, 1:], 0.0, atol=1e-12)
        assert v_body[:, 0].min() > 0

    def test_heading_mode_rejects_stalls(self):
        t = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
        wp = np.column_stack([t, np.sin(t), np.zeros_like(t),
                              np.zeros_like(t), np.zeros_like(t)])
        with pytest.raises(ConfigError):
            Trajectory(wp, yaw_mode="heading")

    def test_rotation_is_orthonormal(self):
        traj = Trajectory(wavy_waypoints(), yaw_mode="spline")
        r = traj.rotation(np.linspace(0, 15, 40))
        npt.assert_allclose(r @ np.swapaxes(r, 1, 2),
                            np.broadcast_to(np.eye(3), r.shape), atol=1e-12)
        npt.assert_allclose(np.linalg.det(r), 1.0, atol=1e-12)


class TestWorld:
    def test_landmarks_on_faces(self):
        traj = Trajectory(circle_waypoints(), yaw_mode="heading")
        world = build_world(traj, 3.0, 400, np.random.default_rng(0))
        lm = world.landmarks
        assert lm.shape == (400, 3)
        on_face = np.isclose(lm, world.lo) | np.isclose(lm, world.hi)
        assert np.all(on_face.any(axis=1))
        assert np.all(lm >= world.lo - 1e-12)
        assert np.all(lm <= world.hi + 1e-12)

    def test_ray_exit_hits_boundary(self):
        rng = np.random.default_rng(3)
        lo = np.array([-2.0, -1.0, 0.0])
        hi = np.array([3.0, 4.0, 2.5])
        origins = rng.uniform(lo + 0.1, hi - 0.1, size=(100, 3))
        d = rng.standard_normal((100, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        t = ray_exit(lo, hi, origins, d)
        hit = origins + t[:, None] * d
        assert np.all(t > 0)
        on_face = (np.isclose(hit, lo, atol=1e-9)
                   | np.isclose(hit, hi, atol=1e-9)).any(axis=1)
        assert on_face.all()
        inside = np.all(hit >= lo - 1e-9, axis=1) \
            & np.all(hit <= hi + 1e-9, axis=1)
        assert inside.all()


def _zero_noise(cfg):
    cfg.imu.gyro_noise = cfg.imu.gyro_walk = 0.0
    cfg.imu.accel_noise = cfg.imu.accel_walk = 0.0
    for c in cfg.cameras:
        c.sigma_px = 1e-12
    if cfg.wheel is not None:
        cfg.wheel.sigma = 0.0
    for g in cfg.gnss:
        g.std = 1e-12
    for l in cfg.lidars:
        l.sigma = 0.0
    return cfg


class TestSimulate:
    def test_deterministic_per_seed(self):
        a = simulate(small_config())
        b = simulate(small_config())
        npt.assert_array_equal(a.imu["w"], b.imu["w"])
        npt.assert_array_equal(a.imu["a"], b.imu["a"])
        npt.assert_array_equal(a.cameras[0]["uv"], b.cameras[0]["uv"])
        npt.assert_array_equal(a.wheel["wl"], b.wheel["wl"])
        npt.assert_array_equal(a.gnss[1]["z"], b.gnss[1]["z"])
        npt.assert_array_equal(a.lidars[0][3][1], b.lidars[0][3][1])
        npt.assert_array_equal(a.world.landmarks, b.world.landmarks)
        c = simulate(small_config(seed=2))
        assert not np.array_equal(a.imu["w"], c.imu["w"])

    def test_streams_are_independent(self):
        base = simulate(small_config())
        cfg = small_config()
        cfg.cameras = []
        cfg.lidars = cfg.lidars[:1]
        other = simulate(cfg)
        npt.assert_array_equal(base.imu["a"], other.imu["a"])
        npt.assert_array_equal(base.gnss[0]["z"], other.gnss[0]["z"])
        npt.assert_array_equal(base.lidars[0][0][1], other.lidars[0][0][1])
        npt.assert_array_equal(base.truth["bg"], other.truth["bg"])

    def test_zero_noise_imu_matches_kinematics(self):
        cfg = _zero_noise(small_config())
        data = simulate(cfg)
        t = data.imu["t"]
        w_pred = data.traj.omega(t) + data.truth["bg"]
        npt.assert_allclose(data.imu["w"], w_pred, atol=1e-12)
        acc_w = data.traj.acceleration(t)
        acc_w[:, 2] += cfg.gravity
        a_pred = np.einsum("kij,kj->ki", data.truth["R"], acc_w) \
            + data.truth["ba"]
        npt.assert_allclose(data.imu["a"], a_pred, atol=1e-10)

    def test_zero_noise_camera_reprojects_exactly(self):
        cfg = _zero_noise(small_config())
        data = simulate(cfg)
        cam = cfg.cameras[1]
        obs = data.cameras[1]
        r_ic = so3.exp_so3(np.asarray(cam.rot_imu_to_cam))
        fu, fv, cu, cv = cam.intrinsics
        for j in range(0, obs["t"].size, 97):
            tau = obs["t"][j] + cam.time_offset
            p_f = data.world.landmarks[obs["feat_id"][j]]
            p_c = r_ic @ data.traj.rotation(tau) \
                @ (p_f - data.traj.position(tau)) \
                + np.asarray(cam.p_imu_in_cam)
            uv = np.array([fu * p_c[0] / p_c[2] + cu,
                           fv * p_c[1] / p_c[2] + cv])
            npt.assert_allclose(obs["uv"][j], uv, atol=1e-8)

    def test_zero_noise_gnss_is_antenna_position(self):
        cfg = _zero_noise(small_config())
        data = simulate(cfg)
        for gc, stream in zip(cfg.gnss, data.gnss):
            tau = stream["t"] + gc.time_offset
            r = data.traj.rotation(tau)
            pred = data.traj.position(tau) + np.einsum(
                "kji,j->ki", r, np.asarray(gc.p_gnss_in_imu))
            npt.assert_allclose(stream["z"], pred, atol=1e-9)

    def test_zero_noise_wheel_matches_body_rates(self):
        cfg = _zero_noise(small_config())
        data = simulate(cfg)
        wc = cfg.wheel
        r_l, r_r, base = wc.intrinsics
        tau = data.wheel["t"] + wc.time_offset
        v_fwd = 0.5 * (data.wheel["wl"] * r_l + data.wheel["wr"] * r_r)
        w_z = (data.wheel["wr"] * r_r - data.wheel["wl"] * r_l) / base
        npt.assert_allclose(w_z, data.traj.omega(tau)[:, 2], atol=1e-12)
        speed = np.linalg.norm(data.traj.velocity(tau), axis=1)
        npt.assert_allclose(v_fwd, speed, atol=1e-12)

    def test_zero_noise_lidar_points_on_walls(self):
        cfg = _zero_noise(small_config())
        data = simulate(cfg)
        for lc, scans in zip(cfg.lidars, data.lidars):
            r_il = so3.exp_so3(np.asarray(lc.rot_imu_to_lidar))
            p_l_in_i = -r_il.T @ np.asarray(lc.p_imu_in_lidar)
            tk, pts = scans[2]
            tau = tk + lc.time_offset
            r_wi = data.traj.rotation(tau)
            p_w = (pts @ r_il @ r_wi) + data.traj.position(tau) \
                + r_wi.T @ p_l_in_i
            on_face = (np.isclose(p_w, data.world.lo, atol=1e-8)
                       | np.isclose(p_w, data.world.hi, atol=1e-8))
            assert on_face.any(axis=1).all()

    def test_drop_window_removes_samples(self):
        cfg = small_config()
        cfg.gnss[0].drop = [1.0, 2.5]
        cfg.wheel.drop = [0.5, 1.0]
        data = simulate(cfg)
        t = data.gnss[0]["t"]
        assert not np.any((t >= 1.0) & (t < 2.5))
        assert np.any(t >= 2.5)
        tw = data.wheel["t"]
        assert not np.any((tw >= 0.5) & (tw < 1.0))

    def test_disabled_sensor_has_no_samples(self):
        cfg = small_config()
        cfg.cameras[0].enabled = False
        data = simulate(cfg)
        assert data.cameras[0]["t"].size == 0
        assert data.cameras[1]["t"].size > 0

    def test_wheel_requires_planar_trajectory(self):
        cfg = small_config()
        cfg.trajectory = TrajectoryConfig(waypoints=wavy_waypoints(),
                                          yaw_mode="spline")
        cfg.duration = 4.0
        with pytest.raises(ConfigError):
            simulate(cfg)

    def test_stream_rng_stable(self):
        a = stream_rng(7, "camera", 1).standard_normal(4)
        b = stream_rng(7, "camera", 1).standard_normal(4)
        c = stream_rng(7, "camera", 0).standard_normal(4)
        npt.assert_array_equal(a, b)
        assert not np.array_equal(a, c)


class TestConfig:
    def test_roundtrip_through_dict(self):
        cfg = small_config()
        cfg.estimator.dynamic_cloning = True
        again = from_dict(to_dict(cfg))
        assert to_dict(again) == to_dict(cfg)

    def test_yaml_roundtrip(self, tmp_path):
        from navfuse import config as cfgmod
        cfg = small_config()
        path = tmp_path / "run.yaml"
        cfgmod.save(cfg, path)
        again = cfgmod.load(path)
        assert to_dict(again) == to_dict(cfg)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            from_dict({"durations": 5.0})

    def test_bad_values_rejected(self):
        cfg = small_config()
        cfg.imu.rate = -1.0
        with pytest.raises(ConfigError, match="imu.rate"):
            cfg.validate()
        cfg = small_config()
        cfg.estimator.order = 2
        with pytest.raises(ConfigError, match="order"):
            cfg.validate()

    def test_default_rig_layout(self):
        cfg = default_config(waypoints=circle_waypoints())
        assert len(cfg.cameras) == 2 and len(cfg.gnss) == 2
        assert len(cfg.lidars) == 2 and cfg.wheel is not None
        assert cfg.cameras[0].p_imu_in_cam != cfg.cameras[1].p_imu_in_cam
        assert cfg.lidars[0].rot_imu_to_lidar != \
            cfg.lidars[1].rot_imu_to_lidar
