"""Filter state: IMU block, pose clone window, calibration, covariance.

The error state is ordered as

    [ imu (15) | calibration blocks | frame (4) | clones (6 each, by time) ]

with the IMU block (theta, p, v, bg, ba). Clones are (theta, p) snapshots of
the IMU pose taken at clone times; they live at the end of the vector so
that cloning is a covariance append and marginalizing the oldest clone is a
contiguous delete. Calibration blocks exist in the error
state only while their ``estimate_*`` flag is set; disabled parameters are
constants. The optional frame block (yaw, translation) is present only while
a local-to-global transform is being refined.

Conventions: rotations are global-to-local matrices (see :mod:`navfuse.so3`);
all error states are left-multiplicative, ``R = Exp(dtheta) @ R_hat``.
Sensor extrinsics are stored as ``(R_imu_to_x, p_imu_in_x)``; the position of
the sensor in the IMU frame, when needed, is ``-R.T @ p``. GNSS stores the
lever arm ``p_gnss_in_imu`` directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import so3

__all__ = [
    "ImuState",
    "Clone",
    "CameraCalib",
    "WheelCalib",
    "LidarCalib",
    "GnssCalib",
    "FrameTransform",
    "NavState",
    "IMU_DIM",
    "CLONE_DIM",
]

IMU_DIM = 15
CLONE_DIM = 6


@dataclass
class ImuState:
    """Current IMU mean: attitude R_WtoI, position, velocity, biases."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def copy(self) -> "ImuState":
        return ImuState(
            self.R.copy(), self.p.copy(), self.v.copy(), self.bg.copy(), self.ba.copy()
        )


@dataclass
class Clone:
    """A stochastically cloned IMU pose.

    ``v`` and ``omega`` snapshot the velocity and bias-corrected body rate
    at clone time (used by the first-order time-offset model for
    measurements aligned with clone times). ``alpha`` and ``acc`` are the
    smoothed angular-acceleration and gravity-compensated acceleration
    magnitudes over the interval ending at this clone; the interpolation
    error model reads them.
    """

    R: np.ndarray
    p: np.ndarray
    t: float
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    alpha: float = 0.0
    acc: float = 0.0
    keyframe: bool = False


@dataclass
class CameraCalib:
    """Pinhole + radtan camera calibration.

    intrinsics = (fx, fy, cx, cy, k1, k2, p1, p2).
    """

    R_imu_to_cam: np.ndarray
    p_imu_in_cam: np.ndarray
    intrinsics: np.ndarray
    time_offset: float = 0.0
    estimate_extrinsic: bool = False
    estimate_intrinsics: bool = False
    estimate_time_offset: bool = False


@dataclass
class WheelCalib:
    """Differential-drive odometry calibration.

    intrinsics = (r_left, r_right, baseline).
    """

    R_imu_to_odo: np.ndarray
    p_imu_in_odo: np.ndarray
    intrinsics: np.ndarray
    time_offset: float = 0.0
    estimate_extrinsic: bool = False
    estimate_intrinsics: bool = False
    estimate_time_offset: bool = False


@dataclass
class LidarCalib:
    R_imu_to_lidar: np.ndarray
    p_imu_in_lidar: np.ndarray
    time_offset: float = 0.0
    estimate_extrinsic: bool = False
    estimate_time_offset: bool = False


@dataclass
class GnssCalib:
    lever_arm: np.ndarray  # p_gnss_in_imu
    time_offset: float = 0.0
    estimate_lever_arm: bool = False
    estimate_time_offset: bool = False


@dataclass
class FrameTransform:
    """Local-to-global transform being refined: R_WtoE = rot_z(yaw) @ ..."""

    R: np.ndarray  # R_WtoE, yaw-only by construction
    p: np.ndarray  # p_W_in_E


class NavState:
    """Mean + covariance of the full filter state with a dynamic layout."""

    def __init__(self, t: float = 0.0):
        self.t = float(t)
        self.imu = ImuState()
        self.clones: dict[float, Clone] = {}
        self.cameras: list[CameraCalib] = []
        self.wheel: WheelCalib | None = None
        self.lidars: list[LidarCalib] = []
        self.gnss: list[GnssCalib] = []
        self.frame_transform: FrameTransform | None = None
        self.frame_tag = "local"
        self.P = np.zeros((IMU_DIM, IMU_DIM))
        self._layout: list[tuple[tuple, int]] = []
        self._slices: dict[tuple, slice] = {}
        self._rebuild_layout()

    # ------------------------------------------------------------------ layout

    def _calib_blocks(self) -> list[tuple[tuple, int]]:
        blocks: list[tuple[tuple, int]] = []
        for i, cam in enumerate(self.cameras):
            if cam.estimate_extrinsic:
                blocks.append((("cam", i, "ext"), 6))
            if cam.estimate_intrinsics:
                blocks.append((("cam", i, "intr"), 8))
            if cam.estimate_time_offset:
                blocks.append((("cam", i, "toff"), 1))
        if self.wheel is not None:
            if self.wheel.estimate_extrinsic:
                blocks.append((("wheel", "ext"), 6))
            if self.wheel.estimate_intrinsics:
                blocks.append((("wheel", "intr"), 3))
            if self.wheel.estimate_time_offset:
                blocks.append((("wheel", "toff"), 1))
        for i, lid in enumerate(self.lidars):
            if lid.estimate_extrinsic:
                blocks.append((("lidar", i, "ext"), 6))
            if lid.estimate_time_offset:
                blocks.append((("lidar", i, "toff"), 1))
        for i, g in enumerate(self.gnss):
            if g.estimate_lever_arm:
                blocks.append((("gnss", i, "arm"), 3))
            if g.estimate_time_offset:
                blocks.append((("gnss", i, "toff"), 1))
        return blocks

    def _rebuild_layout(self) -> None:
        blocks: list[tuple[tuple, int]] = [(("imu",), IMU_DIM)]
        blocks.extend(self._calib_blocks())
        if self.frame_transform is not None:
            blocks.append((("frame",), 4))
        for t in sorted(self.clones):
            blocks.append((("clone", t), CLONE_DIM))
        self._layout = blocks
        self._slices = {}
        off = 0
        for key, dim in blocks:
            self._slices[key] = slice(off, off + dim)
            off = off + dim
        self._dim = off

    @property
    def error_dim(self) -> int:
        return self._dim

    def slice_of(self, key: tuple) -> slice:
        return self._slices[key]

    def has_block(self, key: tuple) -> bool:
        return key in self._slices

    def layout(self) -> list[tuple[tuple, int]]:
        return list(self._layout)

    def clone_times(self) -> list[float]:
        return sorted(self.clones)

    def clone_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Clone times, rotations, and positions as stacked arrays."""
        ts = self.clone_times()
        Rs = np.stack([self.clones[t].R for t in ts])
        ps = np.stack([self.clones[t].p for t in ts])
        return np.asarray(ts), Rs, ps

    def nearest_clone_time(self, t: float, tol: float = 1e-6) -> float | None:
        best, err = None, tol
        for ct in self.clones:
            d = abs(ct - t)
            if d <= err:
                best, err = ct, d
        return best

    # ------------------------------------------------------- structural ops

    def ensure_calib_layout(self) -> None:
        """Re-derive the layout after calibration flags change; grows P with
        zero rows for newly estimated blocks (callers then seed priors)."""
        old_slices = dict(self._slices)
        old_p = self.P
        self._rebuild_layout()
        P = np.zeros((self._dim, self._dim))
        for key_a, sl_a in self._slices.items():
            if key_a not in old_slices:
                continue
            for key_b, sl_b in self._slices.items():
                if key_b not in old_slices:
                    continue
                P[sl_a, sl_b] = old_p[old_slices[key_a], old_slices[key_b]]
        self.P = P

    def set_calib_prior(self, key: tuple, variances: np.ndarray) -> None:
        sl = self._slices[key]
        self.P[sl, sl] = np.diag(np.atleast_1d(variances))

    def clone_pose(
        self,
        t: float | None = None,
        v: np.ndarray | None = None,
        omega: np.ndarray | None = None,
        alpha: float = 0.0,
        acc: float = 0.0,
    ) -> Clone:
        """Stochastic cloning of the current IMU pose at the current time."""
        t = self.t if t is None else float(t)
        if t in self.clones:
            raise ValueError("clone already exists at this time")
        if self.clones and t < max(self.clones):
            raise ValueError("clone times must be monotonically increasing")
        clone = Clone(
            R=self.imu.R.copy(),
            p=self.imu.p.copy(),
            t=t,
            v=self.imu.v.copy() if v is None else np.asarray(v, float).copy(),
            omega=np.zeros(3) if omega is None else np.asarray(omega, float).copy(),
            alpha=float(alpha),
            acc=float(acc),
        )
        # the new clone is the newest time, so its slot is a pure append
        n = self._dim
        i0 = self._slices[("imu",)].start
        P = np.empty((n + CLONE_DIM, n + CLONE_DIM))
        P[:n, :n] = self.P
        P[n:, :n] = self.P[i0 : i0 + CLONE_DIM, :]
        P[:n, n:] = self.P[:, i0 : i0 + CLONE_DIM]
        P[n:, n:] = self.P[i0 : i0 + CLONE_DIM, i0 : i0 + CLONE_DIM]
        self.clones[t] = clone
        self._rebuild_layout()
        self.P = P
        return clone

    def _insert_block(
        self, key: tuple, dim: int, p_block: np.ndarray, p_cross: np.ndarray
    ) -> None:
        """Insert an error-state block with covariance ``p_block`` and cross
        covariance ``p_cross`` (dim x old_dim, in the old layout order)."""
        old_slices = dict(self._slices)
        self._rebuild_layout()
        new_sl = self._slices[key]
        P = np.zeros((self._dim, self._dim))
        for key_a, sl_a in self._slices.items():
            if key_a == key:
                continue
            for key_b, sl_b in self._slices.items():
                if key_b == key:
                    continue
                P[sl_a, sl_b] = self.P[old_slices[key_a], old_slices[key_b]]
        cross = np.zeros((dim, self._dim))
        for key_b, sl_b in self._slices.items():
            if key_b == key:
                continue
            cross[:, sl_b] = p_cross[:, old_slices[key_b]]
        P[new_sl, :] = cross
        P[:, new_sl] = cross.T
        P[new_sl, new_sl] = p_block
        self.P = P

    def insert_block(
        self, key: tuple, dim: int, p_block: np.ndarray, p_cross: np.ndarray
    ) -> None:
        self._insert_block(key, dim, p_block, p_cross)

    def marginalize(self, keys: list[tuple]) -> None:
        """Drop blocks from the state (clones, frame transform)."""
        drop = [self._slices[k] for k in keys]
        keep = np.ones(self._dim, dtype=bool)
        for sl in drop:
            keep[sl] = False
        self.P = self.P[np.ix_(keep, keep)]
        for k in keys:
            kind = k[0]
            if kind == "clone":
                del self.clones[k[1]]
            elif kind == "frame":
                self.frame_transform = None
            else:
                raise ValueError("only clones and the frame block marginalize")
        self._rebuild_layout()

    # ------------------------------------------------------------- boxplus

    def boxplus(self, dx: np.ndarray) -> None:
        """Apply an error-state correction on-manifold."""
        sl = self._slices[("imu",)]
        d = dx[sl]
        self.imu.R = so3.exp_so3(d[0:3]) @ self.imu.R
        self.imu.p = self.imu.p + d[3:6]
        self.imu.v = self.imu.v + d[6:9]
        self.imu.bg = self.imu.bg + d[9:12]
        self.imu.ba = self.imu.ba + d[12:15]
        for t, clone in self.clones.items():
            d = dx[self._slices[("clone", t)]]
            clone.R = so3.exp_so3(d[0:3]) @ clone.R
            clone.p = clone.p + d[3:6]
        for i, cam in enumerate(self.cameras):
            if cam.estimate_extrinsic:
                d = dx[self._slices[("cam", i, "ext")]]
                cam.R_imu_to_cam = so3.exp_so3(d[0:3]) @ cam.R_imu_to_cam
                cam.p_imu_in_cam = cam.p_imu_in_cam + d[3:6]
            if cam.estimate_intrinsics:
                cam.intrinsics = cam.intrinsics + dx[self._slices[("cam", i, "intr")]]
            if cam.estimate_time_offset:
                cam.time_offset += dx[self._slices[("cam", i, "toff")]][0]
        if self.wheel is not None:
            w = self.wheel
            if w.estimate_extrinsic:
                d = dx[self._slices[("wheel", "ext")]]
                w.R_imu_to_odo = so3.exp_so3(d[0:3]) @ w.R_imu_to_odo
                w.p_imu_in_odo = w.p_imu_in_odo + d[3:6]
            if w.estimate_intrinsics:
                w.intrinsics = w.intrinsics + dx[self._slices[("wheel", "intr")]]
            if w.estimate_time_offset:
                w.time_offset += dx[self._slices[("wheel", "toff")]][0]
        for i, lid in enumerate(self.lidars):
            if lid.estimate_extrinsic:
                d = dx[self._slices[("lidar", i, "ext")]]
                lid.R_imu_to_lidar = so3.exp_so3(d[0:3]) @ lid.R_imu_to_lidar
                lid.p_imu_in_lidar = lid.p_imu_in_lidar + d[3:6]
            if lid.estimate_time_offset:
                lid.time_offset += dx[self._slices[("lidar", i, "toff")]][0]
        for i, g in enumerate(self.gnss):
            if g.estimate_lever_arm:
                g.lever_arm = g.lever_arm + dx[self._slices[("gnss", i, "arm")]]
            if g.estimate_time_offset:
                g.time_offset += dx[self._slices[("gnss", i, "toff")]][0]
        if self.frame_transform is not None:
            d = dx[self._slices[("frame",)]]
            ez = np.array([0.0, 0.0, 1.0])
            self.frame_transform.R = so3.exp_so3(ez * d[0]) @ self.frame_transform.R
            self.frame_transform.p = self.frame_transform.p + d[1:4]

    def copy(self) -> "NavState":
        import copy as _copy

        return _copy.deepcopy(self)
