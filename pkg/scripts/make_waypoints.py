#!/usr/bin/env python3
"""Generate the waypoint sets shipped in navfuse/data.

Two closed-course paths, written as plain CSV so runs are reproducible
without this script:

* ``waypoints_excited.csv``  a 3D loop with calm and aggressive phases
  in all six degrees of freedom, meant for spline yaw mode. The burst
  envelope makes angular and linear acceleration sweep a wide range, so
  error-slope fits see several bins and dynamic cloning has something
  to react to.
* ``waypoints_planar.csv``  a smooth ground-vehicle ellipse with a
  surging speed profile, z = 0, meant for heading yaw mode (exactly
  nonholonomic, so wheel odometry applies).

Both span t in [-3, 75] s: margin beyond the usual 60 s run covers
sensor time offsets and interpolation lookahead at the ends.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from navfuse.sim.io import write_waypoints  # noqa: E402

T_LO, T_HI, DT = -3.0, 75.0, 0.75


def excited_rows(t):
    # burst envelope in [0.1, 1]: calm stretches then aggressive ones
    m = 0.55 + 0.45 * np.sin(2 * np.pi * t / 20.0 - np.pi / 2)
    x = 4.0 * np.sin(2 * np.pi * t / 14.0) \
        + 1.2 * m * np.sin(2 * np.pi * t / 5.1)
    y = 3.2 * np.cos(2 * np.pi * t / 14.0) \
        + 1.2 * m * np.sin(2 * np.pi * t / 6.3 + 1.0)
    z = 1.5 * (0.5 + 0.5 * m) * np.sin(2 * np.pi * t / 9.5)
    yaw = 2 * np.pi * t / 40.0 + 1.1 * m * np.sin(2 * np.pi * t / 7.7)
    pitch = 0.50 * m * np.sin(2 * np.pi * t / 6.1 + 0.7)
    roll = 0.40 * m * np.sin(2 * np.pi * t / 5.3 + 1.9)
    return np.column_stack([t, x, y, z, yaw, pitch, roll])


def planar_rows(t):
    # monotone progress with surging speed; radius breathes slightly
    theta = 0.14 * t - 0.07 * (16.0 / (2 * np.pi)) * np.cos(
        2 * np.pi * t / 16.0)
    r = 1.0 + 0.12 * np.sin(2 * np.pi * t / 19.0)
    x = 6.5 * r * np.cos(theta)
    y = 4.5 * r * np.sin(theta)
    z = np.zeros_like(t)
    yaw = np.zeros_like(t)  # ignored in heading mode
    return np.column_stack([t, x, y, z, yaw])


def main():
    out = Path(__file__).resolve().parents[1] / "src" / "navfuse" / "data"
    out.mkdir(parents=True, exist_ok=True)
    t = np.round(np.arange(T_LO, T_HI + DT / 2, DT), 6)
    write_waypoints(out / "waypoints_excited.csv", excited_rows(t))
    write_waypoints(out / "waypoints_planar.csv", planar_rows(t))
    print(f"wrote {out / 'waypoints_excited.csv'}")
    print(f"wrote {out / 'waypoints_planar.csv'}")


if __name__ == "__main__":
    main()
