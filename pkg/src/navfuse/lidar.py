"""LiDAR point-to-plane updates against an anchored local map.

Map points live in the frame of an anchor clone composed with the current
extrinsics, so the stored coordinates stay valid as estimates move; the
update rows carry Jacobians to both the scan-time pose (interpolated from
the clone window) and the anchor pose. Planes are parameterized by the
closest-point vector ``pi`` with ``pi . p = 1`` on the plane; each matched
point contributes the plane-fit rows of its neighbors plus one
state-dependent row, and the plane parameters are projected out.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import chains, ekf, so3

KNN = 7
KNN_RADIUS = 1.0
MIN_NEIGHBORS = 5
COND_MAX = 1e3
MAX_PLANE_DIST = 0.05
PRUNE_HORIZON = 10.0


def fit_plane(pts):
    """Closest-point plane through the given points.

    Solves ``(A^T A) pi = A^T 1`` for the plane ``pi . p = 1``.

    Returns
    -------
    pi : (3,) array or None
        None when the normal system is numerically singular.
    cond : float
        Condition number of the point matrix.
    """
    A = np.asarray(pts, float)
    s = np.linalg.svd(A, compute_uv=False)
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    if not np.isfinite(cond):
        return None, cond
    try:
        pi = np.linalg.solve(A.T @ A, A.sum(axis=0))
    except np.linalg.LinAlgError:
        return None, cond
    return pi, cond


def plane_distances(pts, pi):
    """Orthogonal point-to-plane distances."""
    return np.abs(pts @ pi - 1.0) / np.linalg.norm(pi)


@dataclass
class LocalMap:
    """Rolling point map in the anchor-clone LiDAR frame.

    The KD-tree is rebuilt lazily on the first query after a change.
    """

    anchor_time: float
    points: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 3)))
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    _tree: cKDTree | None = field(default=None, repr=False)

    def insert(self, pts, t):
        if len(pts) == 0:
            return
        self.points = np.vstack([self.points, pts])
        self.times = np.concatenate([self.times, np.full(len(pts), t)])
        self._tree = None

    def prune(self, t_now, horizon=PRUNE_HORIZON):
        keep = self.times >= t_now - horizon
        if not keep.all():
            self.points = self.points[keep]
            self.times = self.times[keep]
            self._tree = None

    def query(self, q, k=KNN, radius=KNN_RADIUS):
        """Indices of up to k neighbors within the radius."""
        if len(self.points) == 0:
            return np.zeros(0, dtype=int)
        if self._tree is None:
            self._tree = cKDTree(self.points)
        dist, idx = self._tree.query(
            q, k=min(k, len(self.points)), distance_upper_bound=radius)
        dist, idx = np.atleast_1d(dist), np.atleast_1d(idx)
        return idx[np.isfinite(dist)]

    def transform(self, R_new_old, p_old_in_new_frame):
        """Re-express all points: p' = R_new_old @ p + offset."""
        if len(self.points):
            self.points = self.points @ R_new_old.T + p_old_in_new_frame
            self._tree = None


def anchor_pose(state, lidar_id, anchor_time):
    """Anchor-frame pose and Jacobians (clone-aligned sensor pose)."""
    cal = state.lidars[lidar_id]
    c = state.clones[anchor_time]
    return chains.clone_sensor_pose(c.R, c.p, c.t, c.v, c.omega,
                                    cal.R_imu_to_lidar, cal.p_imu_in_lidar)


def reanchor(state, lidar_id, lmap, new_anchor_time):
    """Move the map into the frame of a newer anchor clone."""
    old = anchor_pose(state, lidar_id, lmap.anchor_time)
    new = anchor_pose(state, lidar_id, new_anchor_time)
    R_no = new.R @ old.R.T
    offset = new.R @ (old.p - new.p)
    lmap.transform(R_no, offset)
    lmap.anchor_time = new_anchor_time


def scan_pose(state, lidar_id, t_scan, order):
    """Interpolated LiDAR pose at a scan time (sensor clock)."""
    cal = state.lidars[lidar_id]
    ts, Rs, ps = state.clone_arrays()
    return chains.interp_sensor_pose(ts, Rs, ps, t_scan, order,
                                     R_ItoS=cal.R_imu_to_lidar,
                                     p_I_in_S=cal.p_imu_in_lidar,
                                     t_off=cal.time_offset)


def _state_row(state, lidar_id, sc, ac, p_L, pi):
    """State-Jacobian row of the plane value ``h = pi . p_M(x)``.

    The residual is ``r = 1 - h``, so these rows enter the update as
    ``r ~= H dx + n`` with H the derivative of h. Returns the full-width
    row, the residual, the row mapped to the scan-pose error (used for
    interpolation-noise inflation), and the point in the anchor frame.
    """
    cal = state.lidars[lidar_id]
    p_E = sc.R.T @ p_L + sc.p
    p_M = ac.R @ (p_E - ac.p)

    row_scan = (pi @ ac.R) @ np.hstack([sc.R.T @ so3.skew(p_L),
                                        np.eye(3)])
    row_anchor = -np.concatenate([pi @ so3.skew(p_M), pi @ ac.R])

    row = np.zeros(state.error_dim)
    for k, ct in enumerate(sc.clone_times):
        row[state.slice_of(("clone", ct))] += row_scan @ sc.J_clone[k]
    row[state.slice_of(("clone", ac.clone_times[0]))] += \
        row_anchor @ ac.J_clone[0]
    if cal.estimate_extrinsic:
        row[state.slice_of(("lidar", lidar_id, "ext"))] += \
            row_scan @ sc.J_ext + row_anchor @ ac.J_ext
    if cal.estimate_time_offset:
        row[state.slice_of(("lidar", lidar_id, "toff"))] += \
            row_scan @ sc.J_toff
    return row, 1.0 - p_M @ pi, row_scan, p_M


def point_rows(state, lidar_id, sc, ac, p_L, pi, neighbors, sigma,
               interp_var=None):
    """Whitened, plane-projected rows for one matched point.

    Parameters
    ----------
    sc, ac : ChainResult
        Scan-time and anchor sensor poses.
    p_L : (3,) array
        Measured point in the LiDAR frame.
    pi : (3,) array
        Plane parameters fitted from the neighbors.
    neighbors : (m, 3) array
        Neighboring map points (anchor frame).
    sigma : float
        Per-axis point noise.
    interp_var : (6,) array or None
        Interpolated-pose error variances for the scan pose.

    Returns
    -------
    (H, r) with m - 2 rows.
    """
    m = len(neighbors)
    row, r_last, row_scan, p_M = _state_row(state, lidar_id, sc, ac, p_L, pi)
    n = state.error_dim
    H = np.zeros((m + 1, n))
    H[m] = row

    H_pi = np.vstack([neighbors, p_M[None, :]])
    r = 1.0 - np.concatenate([neighbors @ pi, [p_M @ pi]])

    var = np.full(m + 1, sigma ** 2 * float(pi @ pi))
    if interp_var is not None:
        j = row_scan @ sc.J_interp
        var[m] += float(j @ (interp_var * j))
    w = 1.0 / np.sqrt(var)
    H *= w[:, None]
    H_pi *= w[:, None]
    r *= w
    return ekf.nullspace_project(H, H_pi, r)


def process_scan(state, lidar_id, t_scan, pts_L, lmap, order, sigma,
                 interp_noise=None, chi2_level=0.95, k=KNN,
                 radius=KNN_RADIUS, min_neighbors=MIN_NEIGHBORS,
                 cond_max=COND_MAX, max_dist=MAX_PLANE_DIST):
    """Match a scan against the local map and update the state.

    Points are matched by k-nearest-neighbors in the anchor frame; each
    match with an acceptable plane contributes projected rows. All rows are
    stacked, compressed, and applied in one update. The scan is inserted
    into the map afterwards using the updated estimate.

    Returns the number of matched points used.
    """
    sc = scan_pose(state, lidar_id, t_scan, order)
    ac = anchor_pose(state, lidar_id, lmap.anchor_time)
    interp_var = None
    if interp_noise is not None:
        cal = state.lidars[lidar_id]
        interp_var = interp_noise(t_scan + cal.time_offset)

    blocks = []
    for p_L in pts_L:
        p_M = ac.R @ (sc.R.T @ p_L + sc.p - ac.p)
        idx = lmap.query(p_M, k=k, radius=radius)
        if len(idx) < min_neighbors:
            continue
        neigh = lmap.points[idx]
        pi, cond = fit_plane(neigh)
        if pi is None or cond > cond_max:
            continue
        if plane_distances(neigh, pi).max() > max_dist:
            continue
        if plane_distances(p_M[None, :], pi)[0] > max_dist:
            continue
        out = point_rows(state, lidar_id, sc, ac, p_L, pi, neigh, sigma,
                         interp_var=interp_var)
        if out is None or out[0].shape[0] == 0:
            continue
        if not ekf.mahalanobis_gate(state.P, out[0], out[1], chi2_level):
            continue
        blocks.append(out)

    n_used = len(blocks)
    if blocks:
        H = np.vstack([b[0] for b in blocks])
        r = np.concatenate([b[1] for b in blocks])
        H, r = ekf.compress(H, r)
        if H.shape[0] > 0:
            ekf.ekf_update(state, H, r)

    sc_post = scan_pose(state, lidar_id, t_scan, order)
    ac_post = anchor_pose(state, lidar_id, lmap.anchor_time)
    pts_M = (np.asarray(pts_L) @ sc_post.R + sc_post.p - ac_post.p) \
        @ ac_post.R.T
    lmap.insert(pts_M, t_scan)
    lmap.prune(t_scan)
    return n_used
