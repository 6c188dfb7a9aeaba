"""Filter orchestration: an IMU-driven loop fusing all other sensors.

The IMU clock is the time base. The loop propagates to the next clone
time, clones the pose, applies the wheel preintegration over the last
clone interval, then drains every asynchronous stream whose pending
measurements are covered by the clone window (their event time, stamp
plus estimated offset, is at or before the newest clone). Old clones
fall out of the window afterwards, except keyframes pinned by the GNSS
frame initializer and LiDAR map anchors, which are re-anchored first.

Camera observations accumulate into per-feature tracks; a track is
processed once it ends (feature lost) or is about to outgrow the clone
window, whichever comes first.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import camera as camera_mod
from . import gnss as gnss_mod
from . import initialize
from . import lidar as lidar_mod
from . import propagation
from . import so3
from . import wheel as wheel_mod
from .errors import ConfigError, DivergenceError
from .interp import SlopeTable, select_clone_rate
from .sim.sensors import stream_rng
from .state import CameraCalib, GnssCalib, LidarCalib, NavState, WheelCalib

EMA_TAU = 0.2
TRACK_END_FACTOR = 1.5
MAX_SPEED = 100.0
MAX_VARIANCE = 1e6
MIN_CALIB_PRIOR = 1e-10
INIT_WINDOW = 0.5


@dataclass
class RunResult:
    """Per-clone estimator history plus bookkeeping for one run."""

    t: np.ndarray
    R: np.ndarray
    p: np.ndarray
    v: np.ndarray
    bg: np.ndarray
    ba: np.ndarray
    tags: list
    P_theta: np.ndarray
    P_p: np.ndarray
    P_v: np.ndarray
    timings: dict
    counters: dict
    diverged: bool = False
    state: object = None


def build_state(cfg, deltas=None) -> NavState:
    """Assemble the filter state's calibration from the config.

    ``deltas`` (from :func:`navfuse.sim.perturb_calibration`) offsets the
    estimator's initial calibration away from the simulated truth; the
    matching prior variance is seeded on every estimated block.
    """
    deltas = deltas or {}
    level = float(deltas.get("level", 0.0))
    prior = max(level ** 2, MIN_CALIB_PRIOR)
    st = NavState(t=0.0)

    def offset_rot(r, key):
        d = deltas.get(key)
        return r if d is None else so3.exp_so3(np.asarray(d)) @ r

    def offset_vec(p, key):
        d = deltas.get(key)
        return p if d is None else p + np.asarray(d)

    for i, cc in enumerate(cfg.cameras):
        r = offset_rot(so3.exp_so3(np.asarray(cc.rot_imu_to_cam)),
                       ("camera", i, "rot"))
        p = offset_vec(np.asarray(cc.p_imu_in_cam, float),
                       ("camera", i, "pos"))
        intr = np.concatenate([np.asarray(cc.intrinsics, float),
                               np.zeros(4)])
        st.cameras.append(CameraCalib(
            R_imu_to_cam=r, p_imu_in_cam=p, intrinsics=intr,
            time_offset=cc.time_offset,
            estimate_extrinsic=cc.estimate_extrinsic,
            estimate_intrinsics=cc.estimate_intrinsics,
            estimate_time_offset=cc.estimate_time_offset))
    if cfg.wheel is not None:
        wc = cfg.wheel
        st.wheel = WheelCalib(
            R_imu_to_odo=offset_rot(
                so3.exp_so3(np.asarray(wc.rot_imu_to_odo)),
                ("wheel", 0, "rot")),
            p_imu_in_odo=offset_vec(np.asarray(wc.p_imu_in_odo, float),
                                    ("wheel", 0, "pos")),
            intrinsics=np.asarray(wc.intrinsics, float),
            time_offset=wc.time_offset,
            estimate_extrinsic=wc.estimate_extrinsic,
            estimate_intrinsics=wc.estimate_intrinsics,
            estimate_time_offset=wc.estimate_time_offset)
    for i, lc in enumerate(cfg.lidars):
        st.lidars.append(LidarCalib(
            R_imu_to_lidar=offset_rot(
                so3.exp_so3(np.asarray(lc.rot_imu_to_lidar)),
                ("lidar", i, "rot")),
            p_imu_in_lidar=offset_vec(
                np.asarray(lc.p_imu_in_lidar, float),
                ("lidar", i, "pos")),
            time_offset=lc.time_offset,
            estimate_extrinsic=lc.estimate_extrinsic,
            estimate_time_offset=lc.estimate_time_offset))
    for i, gc in enumerate(cfg.gnss):
        st.gnss.append(GnssCalib(
            lever_arm=offset_vec(np.asarray(gc.p_gnss_in_imu, float),
                                 ("gnss", i, "arm")),
            time_offset=gc.time_offset,
            estimate_lever_arm=gc.estimate_lever_arm,
            estimate_time_offset=gc.estimate_time_offset))
    st.ensure_calib_layout()
    for key, dim in st.layout():
        if key[0] in ("imu", "clone", "frame"):
            continue
        st.set_calib_prior(key, np.full(dim, prior))
    return st


def bootstrap_from_truth(st: NavState, cfg, data) -> None:
    """Start at the simulated truth plus a draw from the stated prior."""
    tr = data.truth
    st.t = float(tr["t"][0])
    st.imu.R = tr["R"][0].copy()
    st.imu.p = tr["p"][0].copy()
    st.imu.v = tr["v"][0].copy()
    st.imu.bg = tr["bg"][0].copy()
    st.imu.ba = tr["ba"][0].copy()
    e = cfg.estimator
    stds = np.repeat([e.p0_theta, e.p0_pos, e.p0_vel, e.p0_bg, e.p0_ba], 3)
    sl = st.slice_of(("imu",))
    st.P[sl, sl] += np.diag(stds ** 2)
    rng = stream_rng(cfg.seed, "bootstrap")
    dx = np.zeros(st.error_dim)
    dx[sl] = stds * rng.standard_normal(15)
    st.boxplus(dx)


def initialize_state(st: NavState, cfg, data) -> None:
    mode = cfg.estimator.init
    if mode == "truth":
        bootstrap_from_truth(st, cfg, data)
        return
    t = data.imu["t"]
    m = t <= t[0] + INIT_WINDOW
    if mode == "static":
        res = initialize.static_init(t[m], data.imu["w"][m],
                                     data.imu["a"][m],
                                     gravity=cfg.gravity)
    else:
        if data.wheel is None:
            raise ConfigError("dynamic initialization needs wheel data")
        te = data.wheel["t"]
        me = te <= t[0] + INIT_WINDOW + 0.1
        res = initialize.dynamic_init(
            t[m], data.imu["w"][m], data.imu["a"][m],
            te[me], data.wheel["wl"][me], data.wheel["wr"][me],
            st.wheel, sigma_g=cfg.imu.gyro_noise * np.sqrt(cfg.imu.rate),
            sigma_a=cfg.imu.accel_noise * np.sqrt(cfg.imu.rate),
            sigma_w=cfg.wheel.sigma, gravity=cfg.gravity)
    st.t = res.t
    st.imu = res.imu.copy()
    sl = st.slice_of(("imu",))
    st.P[sl, sl] += res.P


class _Stopwatch:
    def __init__(self):
        self.acc = {}
        self._t0 = None
        self._key = None

    def start(self, key):
        self._key = key
        self._t0 = time.monotonic()

    def stop(self):
        dt = time.monotonic() - self._t0
        self.acc[self._key] = self.acc.get(self._key, 0.0) + dt


def _camera_frames(stream):
    """Group a flat observation stream into per-stamp frames."""
    t = stream["t"]
    if t.size == 0:
        return []
    change = np.flatnonzero(np.diff(t) != 0) + 1
    ids = np.split(stream["feat_id"], change)
    uvs = np.split(stream["uv"], change)
    stamps = [t[i] for i in np.concatenate([[0], change])]
    return list(zip(stamps, ids, uvs))


class Fusion:
    """One estimator instance bound to a config and a data set."""

    def __init__(self, cfg, data, deltas=None):
        self.cfg = cfg
        self.data = data
        self.state = build_state(cfg, deltas)
        e = cfg.estimator
        self.order = e.order
        self.table = None
        if e.slope_table is not None:
            self.table = (e.slope_table
                          if isinstance(e.slope_table, SlopeTable)
                          else SlopeTable.load(e.slope_table))
        if e.dynamic_cloning and self.table is None:
            raise ConfigError("dynamic cloning needs a slope table")
        if e.use_interp_noise and self.table is None:
            raise ConfigError("the interpolation noise model needs a "
                              "slope table")
        self.sigmas = np.array([cfg.imu.gyro_noise, cfg.imu.accel_noise,
                                cfg.imu.gyro_walk, cfg.imu.accel_walk])
        self.watch = _Stopwatch()
        self.counters = {"camera_tracks": 0, "camera_used": 0,
                         "wheel_updates": 0, "gnss_fixes": 0,
                         "lidar_scans": 0, "lidar_points": 0,
                         "clones": 0, "stale_dropped": 0}
        # stream cursors
        self.frames = [_camera_frames(c) for c in data.cameras]
        self.frame_idx = [0] * len(self.frames)
        self.last_frame_t = [-np.inf] * len(self.frames)
        self.tracks = {}
        self.gnss_idx = [0] * len(data.gnss)
        self.lidar_idx = [0] * len(data.lidars)
        self.maps = [None] * len(data.lidars)
        self.frame_init = gnss_mod.FrameInitializer() if data.gnss else None
        self.ema_alpha = 0.0
        self.ema_acc = 0.0
        self._last_w = None
        self.history = []

    # ------------------------------------------------------------ helpers

    def interp_noise(self):
        if self.table is None or not self.cfg.estimator.use_interp_noise:
            return None
        ts = np.asarray(self.state.clone_times())
        clones = self.state.clones
        table, order = self.table, self.order

        def f(t_phys):
            i = int(np.searchsorted(ts, t_phys))
            i = min(max(i, 1), len(ts) - 1)
            hz = 1.0 / max(ts[i] - ts[i - 1], 1e-6)
            c = clones[ts[i]]
            so_, sp_ = table.noise_std(order, hz, c.alpha, c.acc)
            return np.array([so_ ** 2] * 3 + [sp_ ** 2] * 3)

        return f

    def _clone_rate(self):
        e = self.cfg.estimator
        if not e.dynamic_cloning:
            return e.clone_rate
        return select_clone_rate(self.table, self.order, self.ema_alpha,
                                 self.ema_acc, e.candidate_rates,
                                 gamma_o=e.gamma_o, gamma_p=e.gamma_p)

    def _update_ema(self, t0, t1):
        """Advance smoothed motion magnitudes over IMU samples in (t0, t1]."""
        t = self.data.imu["t"]
        lo, hi = np.searchsorted(t, (t0 + 1e-12, t1 + 1e-12))
        if hi <= lo:
            return
        w = self.data.imu["w"][max(lo - 1, 0):hi]
        a = self.data.imu["a"][lo:hi]
        dt = 1.0 / self.cfg.imu.rate
        k = 1.0 - np.exp(-dt / EMA_TAU)
        r_wi = self.state.imu.R
        g = self.cfg.gravity
        alphas = np.linalg.norm(np.diff(w, axis=0), axis=1) / dt
        net = (a - self.state.imu.ba) @ r_wi
        net[:, 2] -= g
        accs = np.linalg.norm(net, axis=1)
        for j in range(len(a)):
            if j < len(alphas):
                self.ema_alpha += k * (alphas[j] - self.ema_alpha)
            self.ema_acc += k * (accs[j] - self.ema_acc)
        self._last_w = self.data.imu["w"][hi - 1]

    # ------------------------------------------------------------ sensors

    def _wheel_step(self, t_prev, t_new):
        cfg = self.cfg
        if cfg.wheel is None or self.data.wheel is None \
                or self.data.wheel["t"].size == 0:
            return
        cal = self.state.wheel
        t0 = t_prev - cal.time_offset
        t1 = t_new - cal.time_offset
        try:
            pre = wheel_mod.preintegrate(
                self.data.wheel["t"], self.data.wheel["wl"],
                self.data.wheel["wr"], t0, t1, cal.intrinsics,
                cfg.wheel.sigma)
        except ValueError:
            return
        if wheel_mod.wheel_update(self.state, pre, t_prev, t_new,
                                  chi2_level=cfg.estimator.chi2_level):
            self.counters["wheel_updates"] += 1

    def _drain_cameras(self, t_now):
        cfg = self.cfg
        ready = []
        for ci, frames in enumerate(self.frames):
            cal = self.state.cameras[ci]
            while self.frame_idx[ci] < len(frames):
                tf, ids, uvs = frames[self.frame_idx[ci]]
                if tf + cal.time_offset > t_now + 1e-12:
                    break
                for fid, uv in zip(ids, uvs):
                    self.tracks.setdefault((ci, int(fid)), []).append(
                        (tf, uv))
                self.last_frame_t[ci] = tf
                self.frame_idx[ci] += 1

        ts = self.state.clone_times()
        if len(ts) < 2:
            return
        t_old = ts[0]
        window = cfg.estimator.window
        # process a track before marginalization can strand its oldest
        # observation; the margin covers the largest possible clone gap
        e = cfg.estimator
        min_rate = (min(e.candidate_rates) if e.dynamic_cloning
                    else e.clone_rate)
        for key in list(self.tracks):
            ci, _ = key
            cal = self.state.cameras[ci]
            obs = self.tracks[key]
            newest = obs[-1][0]
            ended = (self.last_frame_t[ci] - newest) \
                > TRACK_END_FACTOR / cfg.cameras[ci].rate
            bound = (t_now - (obs[0][0] + cal.time_offset)) \
                > window - (1.0 / min_rate + 0.05)
            if not (ended or bound):
                continue
            del self.tracks[key]
            kept = [(t, uv) for t, uv in obs
                    if t + cal.time_offset >= t_old - 1e-12]
            self.counters["stale_dropped"] += len(obs) - len(kept)
            if len(kept) < cfg.estimator.min_track:
                continue
            cap = cfg.estimator.max_track_obs
            if len(kept) > cap:
                pick = np.round(np.linspace(0, len(kept) - 1,
                                            cap)).astype(int)
                kept = [kept[j] for j in pick]
            t_meas = np.array([t for t, _ in kept])
            uvs = np.vstack([uv for _, uv in kept])
            ready.append((ci, t_meas, uvs))
        if ready:
            self.counters["camera_tracks"] += len(ready)
            sigma_px = max(c.sigma_px for c in cfg.cameras)
            used = camera_mod.camera_update(
                self.state, ready, self.order, sigma_px,
                interp_noise=self.interp_noise(),
                chi2_level=cfg.estimator.chi2_level)
            self.counters["camera_used"] += used

    def _drain_gnss(self, t_now):
        cfg = self.cfg
        if len(self.state.clones) < 2:
            return
        noise = self.interp_noise()
        for gi, stream in enumerate(self.data.gnss):
            cal = self.state.gnss[gi]
            idx = self.gnss_idx[gi]
            t = stream["t"]
            while idx < t.size and t[idx] + cal.time_offset \
                    <= t_now + 1e-12:
                t_fix, z = float(t[idx]), stream["z"][idx]
                std = stream["std"][idx]
                if t_fix + cal.time_offset < self.state.clone_times()[0]:
                    self.counters["stale_dropped"] += 1
                elif self.state.frame_tag == "local":
                    self.frame_init.add_fix(self.state, gi, t_fix, z, std)
                else:
                    gnss_mod.position_update(
                        self.state, gi, t_fix, z, std, self.order,
                        interp_noise=noise,
                        chi2_level=cfg.estimator.chi2_level)
                    self.counters["gnss_fixes"] += 1
                idx += 1
            self.gnss_idx[gi] = idx
        if self.frame_init is not None and self.state.frame_tag == "local":
            self.frame_init.try_switch(self.state, order=1)

    def _drain_lidar(self, t_now):
        cfg = self.cfg
        if len(self.state.clones) < 2:
            return
        noise = self.interp_noise()
        for li, scans in enumerate(self.data.lidars):
            cal = self.state.lidars[li]
            idx = self.lidar_idx[li]
            while idx < len(scans):
                t_scan, pts = scans[idx]
                if t_scan + cal.time_offset > t_now + 1e-12:
                    break
                if t_scan + cal.time_offset \
                        < self.state.clone_times()[0]:
                    self.counters["stale_dropped"] += 1
                    idx += 1
                    continue
                if self.maps[li] is None:
                    self.maps[li] = lidar_mod.LocalMap(anchor_time=t_now)
                used = lidar_mod.process_scan(
                    self.state, li, t_scan, pts, self.maps[li],
                    self.order, cfg.lidars[li].sigma,
                    interp_noise=noise,
                    chi2_level=cfg.estimator.chi2_level)
                self.counters["lidar_scans"] += 1
                self.counters["lidar_points"] += used
                idx += 1
            self.lidar_idx[li] = idx

    def _marginalize(self, t_now):
        cutoff = t_now - self.cfg.estimator.window
        ts = self.state.clone_times()
        drop = [t for t in ts[:-1] if t < cutoff
                and not self.state.clones[t].keyframe]
        if not drop:
            return
        dropset = set(drop)
        for li, lmap in enumerate(self.maps):
            if lmap is not None and lmap.anchor_time in dropset:
                lidar_mod.reanchor(self.state, li, lmap, ts[-1])
        self.state.marginalize([("clone", t) for t in drop])

    def _check_divergence(self):
        st = self.state
        bad = not np.isfinite(st.P).all()
        for arr in (st.imu.R, st.imu.p, st.imu.v, st.imu.bg, st.imu.ba):
            bad = bad or not np.isfinite(arr).all()
        if bad or np.linalg.norm(st.imu.v) > MAX_SPEED \
                or st.P.diagonal().max() > MAX_VARIANCE:
            err = DivergenceError(
                f"filter diverged at t={st.t:.3f}")
            err.result = self.result(diverged=True)
            raise err

    def _record(self):
        st = self.state
        sl = st.slice_of(("imu",)).start
        P = st.P
        self.history.append((
            st.t, st.imu.R.copy(), st.imu.p.copy(), st.imu.v.copy(),
            st.imu.bg.copy(), st.imu.ba.copy(), st.frame_tag,
            P[sl:sl + 3, sl:sl + 3].copy(),
            P[sl + 3:sl + 6, sl + 3:sl + 6].copy(),
            P[sl + 6:sl + 9, sl + 6:sl + 9].copy()))

    # ---------------------------------------------------------------- run

    def run(self) -> RunResult:
        cfg = self.cfg
        data = self.data
        initialize_state(self.state, cfg, data)
        st = self.state
        t_imu = data.imu["t"]
        t_end = float(min(t_imu[-1], cfg.duration))
        omega0 = data.imu["w"][0] - st.imu.bg
        st.clone_pose(t=st.t, omega=omega0)
        self.counters["clones"] += 1
        self._record()

        while st.t < t_end - 1e-9:
            rate = self._clone_rate()
            t_prev = st.t
            t_next = min(t_prev + 1.0 / rate, t_end)
            self.watch.start("propagation")
            propagation.propagate(st, t_imu, data.imu["w"],
                                  data.imu["a"], t_next, self.sigmas,
                                  gravity=cfg.gravity)
            self._update_ema(t_prev, t_next)
            self.watch.stop()
            omega = (self._last_w - st.imu.bg
                     if self._last_w is not None else np.zeros(3))
            st.clone_pose(t=t_next, omega=omega, alpha=self.ema_alpha,
                          acc=self.ema_acc)
            self.counters["clones"] += 1

            self.watch.start("wheel")
            self._wheel_step(t_prev, t_next)
            self.watch.stop()
            self.watch.start("camera")
            self._drain_cameras(t_next)
            self.watch.stop()
            self.watch.start("gnss")
            self._drain_gnss(t_next)
            self.watch.stop()
            self.watch.start("lidar")
            self._drain_lidar(t_next)
            self.watch.stop()
            self.watch.start("marginalization")
            self._marginalize(t_next)
            self.watch.stop()
            self._check_divergence()
            self._record()
        return self.result()

    def result(self, diverged=False) -> RunResult:
        h = self.history
        if h:
            cols = list(zip(*h))
        else:
            cols = [[]] * 10
        return RunResult(
            t=np.array(cols[0], dtype=float),
            R=np.array(cols[1]).reshape(-1, 3, 3),
            p=np.array(cols[2]).reshape(-1, 3),
            v=np.array(cols[3]).reshape(-1, 3),
            bg=np.array(cols[4]).reshape(-1, 3),
            ba=np.array(cols[5]).reshape(-1, 3),
            tags=list(cols[6]),
            P_theta=np.array(cols[7]).reshape(-1, 3, 3),
            P_p=np.array(cols[8]).reshape(-1, 3, 3),
            P_v=np.array(cols[9]).reshape(-1, 3, 3),
            timings=dict(self.watch.acc),
            counters=dict(self.counters),
            diverged=diverged,
            state=self.state)


def run_filter(cfg, data, deltas=None) -> RunResult:
    """Run the estimator over one simulated data set.

    Raises :class:`DivergenceError` (with a partial ``result`` attribute)
    if the filter leaves the trustworthy range.
    """
    return Fusion(cfg, data, deltas=deltas).run()
