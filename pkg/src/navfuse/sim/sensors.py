"""Sensor stream synthesis.

Every stream draws from its own ``numpy`` generator keyed by
``(seed, stream id)``, so adding or removing a sensor never shifts the
noise of the others. Stamps are in each sensor's own clock: the
physical event happens at ``stamp + time_offset`` on the IMU clock,
which is the estimator's time base.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import so3
from ..errors import ConfigError
from .trajectory import Trajectory
from .world import build_world, ray_exit

E3 = np.array([0.0, 0.0, 1.0])

_STREAM = {
    "bias": 0,
    "imu": 1,
    "wheel": 2,
    "landmarks": 3,
    "bootstrap": 4,
    "camera": 10,
    "gnss": 40,
    "lidar": 70,
    "perturb": 90,
}


def stream_rng(seed, kind, idx=0):
    """Independent generator for one sensor stream of one run."""
    key = _STREAM[kind] + idx
    return np.random.default_rng(np.random.SeedSequence(int(seed),
                                                        spawn_key=(key,)))


def _stamps(rate, duration):
    n = int(np.floor(duration * rate)) + 1
    return np.arange(n) / rate


def _apply_drop(t, drop):
    if drop is None:
        return np.ones(t.shape, dtype=bool)
    return ~((t >= drop[0]) & (t < drop[1]))


@dataclass
class SimData:
    """Everything one simulated run produces."""

    cfg: object
    traj: Trajectory
    world: object
    truth: dict
    imu: dict
    cameras: list = field(default_factory=list)
    wheel: dict | None = None
    gnss: list = field(default_factory=list)
    lidars: list = field(default_factory=list)


def _load_waypoints(spec):
    if isinstance(spec, (list, tuple, np.ndarray)):
        return np.asarray(spec, dtype=float)
    from .io import read_waypoints
    return read_waypoints(spec)


def simulate(cfg) -> SimData:
    """Run the full sensor simulation for one seed."""
    wp = _load_waypoints(cfg.trajectory.waypoints)
    traj = Trajectory(wp, yaw_mode=cfg.trajectory.yaw_mode)
    toffs = ([c.time_offset for c in cfg.cameras]
             + [g.time_offset for g in cfg.gnss]
             + [l.time_offset for l in cfg.lidars]
             + ([cfg.wheel.time_offset] if cfg.wheel else [0.0]))
    pad_lo = max(0.0, -min(toffs)) if toffs else 0.0
    pad_hi = max(1e-3, max(toffs) if toffs else 0.0)
    if traj.t0 > -pad_lo + 1e-12 or traj.t1 < cfg.duration + pad_hi:
        raise ConfigError("waypoints must span [0, duration] padded by "
                          "the sensor time offsets")

    world = build_world(traj, cfg.world.margin, cfg.world.n_landmarks,
                        stream_rng(cfg.seed, "landmarks"))
    g = cfg.gravity

    # IMU stream and bias truth
    rng = stream_rng(cfg.seed, "bias")
    t_imu = _stamps(cfg.imu.rate, cfg.duration)
    n = t_imu.size
    dt = 1.0 / cfg.imu.rate
    bg = np.cumsum(np.vstack([0.01 * rng.standard_normal(3),
                              cfg.imu.gyro_walk * np.sqrt(dt)
                              * rng.standard_normal((n - 1, 3))]), axis=0)
    ba = np.cumsum(np.vstack([0.05 * rng.standard_normal(3),
                              cfg.imu.accel_walk * np.sqrt(dt)
                              * rng.standard_normal((n - 1, 3))]), axis=0)
    r_wi = traj.rotation(t_imu)
    p = traj.position(t_imu)
    v = traj.velocity(t_imu)
    acc_w = traj.acceleration(t_imu) + g * E3
    w_true = traj.omega(t_imu)
    a_true = np.einsum("kij,kj->ki", r_wi, acc_w)
    rng = stream_rng(cfg.seed, "imu")
    w_m = w_true + bg + cfg.imu.gyro_noise * np.sqrt(cfg.imu.rate) \
        * rng.standard_normal((n, 3))
    a_m = a_true + ba + cfg.imu.accel_noise * np.sqrt(cfg.imu.rate) \
        * rng.standard_normal((n, 3))

    data = SimData(
        cfg=cfg, traj=traj, world=world,
        truth={"t": t_imu, "R": r_wi, "p": p, "v": v, "bg": bg, "ba": ba},
        imu={"t": t_imu, "w": w_m, "a": a_m},
    )

    for i, cam in enumerate(cfg.cameras):
        data.cameras.append(_simulate_camera(cfg, cam, i, traj, world))
    if cfg.wheel is not None:
        data.wheel = _simulate_wheel(cfg, traj)
    for i, gc in enumerate(cfg.gnss):
        data.gnss.append(_simulate_gnss(cfg, gc, i, traj))
    for i, lc in enumerate(cfg.lidars):
        data.lidars.append(_simulate_lidar(cfg, lc, i, traj, world))
    return data


MIN_DEPTH = 0.3


def _simulate_camera(cfg, cam, idx, traj, world):
    rng = stream_rng(cfg.seed, "camera", idx)
    max_features = cam.max_features
    t = _stamps(cam.rate, cfg.duration)
    t = t[_apply_drop(t, cam.drop)]
    if not cam.enabled:
        t = t[:0]
    fu, fv, cu, cv = cam.intrinsics
    width, height = cam.resolution
    r_ic = so3.exp_so3(np.asarray(cam.rot_imu_to_cam))
    p_ic = np.asarray(cam.p_imu_in_cam)
    lm = world.landmarks
    rows_t, rows_id, rows_uv = [], [], []
    active: list[int] = []
    for tk in t:
        tau = tk + cam.time_offset
        r_wi = traj.rotation(tau)
        p_i = traj.position(tau)
        p_c = (r_ic @ r_wi @ (lm - p_i).T).T + p_ic
        z = p_c[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = fu * p_c[:, 0] / z + cu
            vv = fv * p_c[:, 1] / z + cv
        vis = np.flatnonzero((z > MIN_DEPTH) & (u >= 0) & (u < width)
                             & (vv >= 0) & (vv < height))
        vis_set = set(vis.tolist())
        keep = [j for j in active if j in vis_set][:max_features]
        if len(keep) < max_features:
            have = set(keep)
            for j in vis:
                if j not in have:
                    keep.append(int(j))
                    if len(keep) == max_features:
                        break
        active = keep
        if not keep:
            continue
        kidx = np.asarray(keep)
        uv = np.stack([u[kidx], vv[kidx]], axis=1)
        uv += cam.sigma_px * rng.standard_normal(uv.shape)
        rows_t.append(np.full(len(keep), tk))
        rows_id.append(kidx)
        rows_uv.append(uv)
    if rows_t:
        return {"t": np.concatenate(rows_t),
                "feat_id": np.concatenate(rows_id).astype(int),
                "uv": np.vstack(rows_uv)}
    return {"t": np.zeros(0), "feat_id": np.zeros(0, dtype=int),
            "uv": np.zeros((0, 2))}


def _simulate_wheel(cfg, traj):
    wc = cfg.wheel
    if not traj.is_planar():
        raise ConfigError("wheel odometry requires a planar trajectory")
    rng = stream_rng(cfg.seed, "wheel")
    t = _stamps(wc.rate, cfg.duration)
    t = t[_apply_drop(t, wc.drop)]
    if not wc.enabled:
        t = t[:0]
    tau = t + wc.time_offset
    r_io = so3.exp_so3(np.asarray(wc.rot_imu_to_odo))
    p_o_in_i = -r_io.T @ np.asarray(wc.p_imu_in_odo)
    w_i = traj.omega(tau)
    r_wi = traj.rotation(tau)
    v_o_w = traj.velocity(tau) + np.einsum(
        "kji,kj->ki", r_wi, np.cross(w_i, p_o_in_i))
    v_o = np.einsum("ij,kjl,kl->ki", r_io, r_wi, v_o_w)
    w_o = w_i @ r_io.T
    v_fwd = v_o[:, 0]
    w_z = w_o[:, 2]
    r_l, r_r, base = wc.intrinsics
    wl = (v_fwd - 0.5 * w_z * base) / r_l
    wr = (v_fwd + 0.5 * w_z * base) / r_r
    wl = wl + wc.sigma * rng.standard_normal(wl.shape)
    wr = wr + wc.sigma * rng.standard_normal(wr.shape)
    return {"t": t, "wl": wl, "wr": wr}


def _simulate_gnss(cfg, gc, idx, traj):
    rng = stream_rng(cfg.seed, "gnss", idx)
    t = _stamps(gc.rate, cfg.duration)
    t = t[_apply_drop(t, gc.drop)]
    if not gc.enabled:
        t = t[:0]
    tau = t + gc.time_offset
    r_wi = traj.rotation(tau)
    arm = np.asarray(gc.p_gnss_in_imu)
    z = traj.position(tau) + np.einsum("kji,j->ki", r_wi, arm)
    z = z + gc.std * rng.standard_normal(z.shape)
    std = np.full((t.size, 3), gc.std)
    return {"t": t, "z": z, "std": std}


LIDAR_ELEV = 0.4


def _simulate_lidar(cfg, lc, idx, traj, world):
    rng = stream_rng(cfg.seed, "lidar", idx)
    t = _stamps(lc.rate, cfg.duration)
    t = t[_apply_drop(t, lc.drop)]
    if not lc.enabled:
        t = t[:0]
    r_il = so3.exp_so3(np.asarray(lc.rot_imu_to_lidar))
    p_l_in_i = -r_il.T @ np.asarray(lc.p_imu_in_lidar)
    scans = []
    for tk in t:
        tau = tk + lc.time_offset
        r_wi = traj.rotation(tau)
        origin = traj.position(tau) + r_wi.T @ p_l_in_i
        az = rng.uniform(0.0, 2.0 * np.pi, lc.n_points)
        el = rng.uniform(-LIDAR_ELEV, LIDAR_ELEV, lc.n_points)
        d_l = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az),
                        np.sin(el)], axis=1)
        d_w = d_l @ r_il @ r_wi
        rng_true = ray_exit(world.lo, world.hi,
                            np.broadcast_to(origin, d_w.shape), d_w)
        rho = rng_true + lc.sigma * rng.standard_normal(lc.n_points)
        scans.append((float(tk), d_l * rho[:, None]))
    return scans


PERTURB_BLOCKS = (
    ("camera", "rot"), ("camera", "pos"),
    ("wheel", "rot"), ("wheel", "pos"),
    ("gnss", "arm"),
    ("lidar", "rot"), ("lidar", "pos"),
)


def perturb_calibration(cfg, level, seed):
    """Fixed-direction calibration offsets scaled by ``level``.

    Returns a dict mapping ``(sensor, index, block)`` to a 3-vector
    delta of magnitude ``level`` (radians for rotations, meters for
    translations). The direction depends only on ``seed``, so sweeping
    ``level`` moves each parameter along one line, and the induced
    error grows monotonically with the level.
    """
    rng = stream_rng(seed, "perturb")
    deltas = {}

    def unit():
        u = rng.standard_normal(3)
        return u / np.linalg.norm(u)

    for i in range(len(cfg.cameras)):
        deltas[("camera", i, "rot")] = level * unit()
        deltas[("camera", i, "pos")] = level * unit()
    if cfg.wheel is not None:
        deltas[("wheel", 0, "rot")] = level * unit()
        deltas[("wheel", 0, "pos")] = level * unit()
    for i in range(len(cfg.gnss)):
        deltas[("gnss", i, "arm")] = level * unit()
    for i in range(len(cfg.lidars)):
        deltas[("lidar", i, "rot")] = level * unit()
        deltas[("lidar", i, "pos")] = level * unit()
    deltas["level"] = float(level)
    return deltas
