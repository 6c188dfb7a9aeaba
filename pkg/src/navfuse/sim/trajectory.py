"""Smooth reference trajectory from waypoints.

Position is a natural cubic spline through the waypoint positions.
Orientation comes in two flavors:

``heading``
    Yaw follows the horizontal velocity direction, pitch and roll are
    zero. A planar waypoint set then moves exactly like a differential
    drive platform (zero lateral and vertical body velocity), which is
    what the wheel-odometry model assumes.

``spline``
    Yaw, pitch, and roll are splined through the waypoint columns
    (ZYX Euler, yaw unwrapped first). Use this for 3D runs that need
    excitation on all axes.

All kinematic quantities (velocity, acceleration, body angular rate)
are analytic derivatives of the splines, not finite differences.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline

from ..errors import ConfigError

_MIN_SPEED = 0.05


def _rz(ps):
    c, s = np.cos(ps), np.sin(ps)
    out = np.zeros(ps.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    out[..., 2, 2] = 1.0
    return out


def _ry(th):
    c, s = np.cos(th), np.sin(th)
    out = np.zeros(th.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 2] = s
    out[..., 2, 0] = -s
    out[..., 2, 2] = c
    out[..., 1, 1] = 1.0
    return out


def _rx(ph):
    c, s = np.cos(ph), np.sin(ph)
    out = np.zeros(ph.shape + (3, 3))
    out[..., 1, 1] = c
    out[..., 1, 2] = -s
    out[..., 2, 1] = s
    out[..., 2, 2] = c
    out[..., 0, 0] = 1.0
    return out


class Trajectory:
    """Spline trajectory with analytic derivatives.

    Parameters
    ----------
    waypoints : (n, 5) or (n, 7) array
        Rows ``t, x, y, z, yaw`` or ``t, x, y, z, yaw, pitch, roll``.
        Times must be strictly increasing.
    yaw_mode : str
        ``"heading"`` or ``"spline"`` (see module docstring).
    """

    def __init__(self, waypoints, yaw_mode="heading"):
        wp = np.atleast_2d(np.asarray(waypoints, dtype=float))
        if wp.shape[0] < 4:
            raise ConfigError("need at least 4 waypoints for a cubic spline")
        if wp.shape[1] not in (5, 7):
            raise ConfigError("waypoint rows must be t,x,y,z,yaw[,pitch,"
                              "roll]")
        t = wp[:, 0]
        if np.any(np.diff(t) <= 0):
            raise ConfigError("waypoint times must be strictly increasing")
        self.t0 = float(t[0])
        self.t1 = float(t[-1])
        self.yaw_mode = yaw_mode
        self._pos = CubicSpline(t, wp[:, 1:4], bc_type="natural")
        self._vel = self._pos.derivative(1)
        self._acc = self._pos.derivative(2)
        if yaw_mode == "heading":
            self._eul = None
            grid = np.linspace(self.t0, self.t1, max(200, 20 * len(t)))
            sp = np.linalg.norm(self._vel(grid)[:, :2], axis=1)
            if sp.min() < _MIN_SPEED:
                raise ConfigError("heading yaw needs nonzero horizontal "
                                  "speed along the whole trajectory")
        elif yaw_mode == "spline":
            eul = np.zeros((wp.shape[0], 3))
            eul[:, 0] = np.unwrap(wp[:, 4])
            if wp.shape[1] == 7:
                eul[:, 1] = np.unwrap(wp[:, 5])
                eul[:, 2] = np.unwrap(wp[:, 6])
            self._eul = CubicSpline(t, eul, bc_type="natural")
            self._eul_d = self._eul.derivative(1)
        else:
            raise ConfigError(f"unknown yaw_mode {yaw_mode!r}")

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t0 - 1e-9) or np.any(t > self.t1 + 1e-9):
            raise ConfigError("query time outside the waypoint span")
        return np.clip(t, self.t0, self.t1)

    def position(self, t):
        return self._pos(self._check(t))

    def velocity(self, t):
        return self._vel(self._check(t))

    def acceleration(self, t):
        return self._acc(self._check(t))

    def _angles(self, t):
        """ZYX Euler angles (yaw, pitch, roll) and their time rates."""
        t = self._check(t)
        if self._eul is not None:
            e = self._eul(t)
            ed = self._eul_d(t)
            return e[..., 0], e[..., 1], e[..., 2], ed[..., 0], \
                ed[..., 1], ed[..., 2]
        v = self._vel(t)
        a = self._acc(t)
        vx, vy = v[..., 0], v[..., 1]
        s2 = vx ** 2 + vy ** 2
        yaw = np.arctan2(vy, vx)
        yaw_d = (vx * a[..., 1] - vy * a[..., 0]) / s2
        z = np.zeros_like(yaw)
        return yaw, z, z, yaw_d, z, z

    def rotation(self, t):
        """World-to-body rotation ``R_WtoI`` at ``t`` (stacked (..,3,3))."""
        yaw, pitch, roll, _, _, _ = self._angles(t)
        r_bw = _rz(yaw) @ _ry(pitch) @ _rx(roll)
        return np.swapaxes(r_bw, -1, -2)

    def omega(self, t):
        """Body angular velocity at ``t``.

        Uses the ZYX Euler kinematics: with yaw rate ``pd``, pitch rate
        ``td``, and roll rate ``fd``,

        ``w = [fd - pd sin(th), td cos(ph) + pd cos(th) sin(ph),
        -td sin(ph) + pd cos(th) cos(ph)]``.
        """
        yaw, pitch, roll, pd, td, fd = self._angles(t)
        del yaw
        sph, cph = np.sin(roll), np.cos(roll)
        sth, cth = np.sin(pitch), np.cos(pitch)
        w = np.stack([fd - pd * sth,
                      td * cph + pd * cth * sph,
                      -td * sph + pd * cth * cph], axis=-1)
        return w

    def is_planar(self, tol=1e-9):
        grid = np.linspace(self.t0, self.t1, 500)
        p = self._pos(grid)
        flat = np.ptp(p[:, 2]) < max(tol, 1e-6)
        if self._eul is None:
            return flat
        e = self._eul(grid)
        return flat and np.abs(e[:, 1:]).max() < 1e-9
