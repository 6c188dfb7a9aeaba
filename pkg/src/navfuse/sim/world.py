"""Box room around the trajectory: landmarks on the walls, ray casting.

The room is the axis-aligned bounding box of the trajectory grown by a
margin, so every sensor pose stays strictly inside it. Landmarks are
drawn uniformly over the six faces with probability proportional to
face area; LiDAR ranges come from the closed-form exit intersection of
a ray with the box interior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class BoxWorld:
    lo: np.ndarray
    hi: np.ndarray
    landmarks: np.ndarray

    @property
    def extent(self):
        return self.hi - self.lo


def build_world(traj, margin, n_landmarks, rng):
    """Fit a box around ``traj`` and scatter landmarks on its faces."""
    grid = np.linspace(traj.t0, traj.t1, 1000)
    p = traj.position(grid)
    lo = p.min(axis=0) - margin
    hi = p.max(axis=0) + margin
    # degenerate axes (planar runs) still need real walls
    thin = (hi - lo) < 2.0 * margin
    mid = 0.5 * (hi + lo)
    lo = np.where(thin, mid - margin, lo)
    hi = np.where(thin, mid + margin, hi)
    landmarks = _face_points(lo, hi, n_landmarks, rng)
    return BoxWorld(lo=lo, hi=hi, landmarks=landmarks)


def _face_points(lo, hi, n, rng):
    if n == 0:
        return np.zeros((0, 3))
    ext = hi - lo
    # face pairs normal to x, y, z
    areas = np.array([ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]])
    areas = np.repeat(areas, 2)
    prob = areas / areas.sum()
    face = rng.choice(6, size=n, p=prob)
    uv = rng.uniform(size=(n, 2))
    pts = np.empty((n, 3))
    for i, f in enumerate(face):
        axis = f // 2
        side = f % 2
        others = [a for a in range(3) if a != axis]
        pts[i, axis] = hi[axis] if side else lo[axis]
        pts[i, others[0]] = lo[others[0]] + uv[i, 0] * ext[others[0]]
        pts[i, others[1]] = lo[others[1]] + uv[i, 1] * ext[others[1]]
    return pts


def ray_exit(lo, hi, origins, dirs):
    """Distance from interior points to the box along unit directions.

    Parameters
    ----------
    lo, hi : (3,) arrays
    origins : (n, 3) array
        Must lie strictly inside the box.
    dirs : (n, 3) array
        Unit direction per ray.

    Returns
    -------
    (n,) array of positive hit distances.
    """
    origins = np.atleast_2d(origins)
    dirs = np.atleast_2d(dirs)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = (hi - origins) / dirs
        t_lo = (lo - origins) / dirs
    t_axis = np.where(dirs > 0, t_hi, t_lo)
    t_axis = np.where(np.abs(dirs) < 1e-12, np.inf, t_axis)
    return t_axis.min(axis=1)
