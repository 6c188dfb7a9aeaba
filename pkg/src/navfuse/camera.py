"""Camera measurement model.

Pinhole projection with radial-tangential distortion, multi-view
triangulation, and the per-feature update rows used by the sliding-window
filter. A feature track is processed by interpolating the camera pose at
each observation time (through the IMU-camera extrinsics and time offset),
triangulating the point from the estimated poses, stacking reprojection
residual rows, and projecting out the feature direction so the remaining
rows constrain only the state.

Intrinsics are packed as ``(fx, fy, cx, cy, k1, k2, p1, p2)``.
"""

import numpy as np

from . import chains, ekf, so3

MIN_BASELINE = 0.02
MIN_DEPTH = 0.05


def distort(uv_n, dist):
    """Apply radial-tangential distortion to normalized coordinates.

    Parameters
    ----------
    uv_n : (2,) array
        Normalized image coordinates (x/z, y/z).
    dist : (4,) array
        Distortion coefficients (k1, k2, p1, p2).

    Returns
    -------
    (2,) array
        Distorted normalized coordinates.
    """
    x, y = uv_n
    k1, k2, p1, p2 = dist
    r2 = x * x + y * y
    rad = 1.0 + k1 * r2 + k2 * r2 * r2
    return np.array([
        x * rad + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
        y * rad + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y,
    ])


def distort_jacobians(uv_n, dist):
    """Jacobians of `distort` with respect to the point and coefficients.

    Returns
    -------
    J_uv : (2, 2) array
    J_dist : (2, 4) array
        Columns ordered (k1, k2, p1, p2).
    """
    x, y = uv_n
    k1, k2, p1, p2 = dist
    r2 = x * x + y * y
    rad = 1.0 + k1 * r2 + k2 * r2 * r2
    drad = k1 + 2.0 * k2 * r2
    J_uv = np.array([
        [rad + 2.0 * x * x * drad + 2.0 * p1 * y + 6.0 * p2 * x,
         2.0 * x * y * drad + 2.0 * p1 * x + 2.0 * p2 * y],
        [2.0 * x * y * drad + 2.0 * p1 * x + 2.0 * p2 * y,
         rad + 2.0 * y * y * drad + 6.0 * p1 * y + 2.0 * p2 * x],
    ])
    J_dist = np.array([
        [x * r2, x * r2 * r2, 2.0 * x * y, r2 + 2.0 * x * x],
        [y * r2, y * r2 * r2, r2 + 2.0 * y * y, 2.0 * x * y],
    ])
    return J_uv, J_dist


def undistort(uv_d, dist, iters=10, tol=1e-10):
    """Invert `distort` by fixed-point iteration on the radial model."""
    k1, k2, p1, p2 = dist
    x, y = uv_d
    for _ in range(iters):
        r2 = x * x + y * y
        rad = 1.0 + k1 * r2 + k2 * r2 * r2
        xn = (uv_d[0] - (2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x))) / rad
        yn = (uv_d[1] - (p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y)) / rad
        if abs(xn - x) < tol and abs(yn - y) < tol:
            x, y = xn, yn
            break
        x, y = xn, yn
    return np.array([x, y])


def project(p_C, intr):
    """Project a camera-frame point to pixels.

    Parameters
    ----------
    p_C : (3,) array
        Point in the camera frame; must have positive depth.
    intr : (8,) array
        (fx, fy, cx, cy, k1, k2, p1, p2).

    Returns
    -------
    uv : (2,) array
        Pixel coordinates.
    J_p : (2, 3) array
        Jacobian with respect to the camera-frame point.
    J_intr : (2, 8) array
        Jacobian with respect to the intrinsics vector.
    """
    fx, fy, cx, cy = intr[0:4]
    dist = intr[4:8]
    x, y, z = p_C
    uv_n = np.array([x / z, y / z])
    J_norm = np.array([[1.0 / z, 0.0, -x / (z * z)],
                       [0.0, 1.0 / z, -y / (z * z)]])
    uv_d = distort(uv_n, dist)
    J_uv, J_dist = distort_jacobians(uv_n, dist)
    F = np.diag([fx, fy])
    uv = np.array([fx * uv_d[0] + cx, fy * uv_d[1] + cy])
    J_p = F @ J_uv @ J_norm
    J_intr = np.zeros((2, 8))
    J_intr[0, 0] = uv_d[0]
    J_intr[1, 1] = uv_d[1]
    J_intr[0, 2] = 1.0
    J_intr[1, 3] = 1.0
    J_intr[:, 4:8] = F @ J_dist
    return uv, J_p, J_intr


def pixel_to_normalized(uv, intr):
    """Map pixel coordinates back to undistorted normalized coordinates."""
    xy_d = np.array([(uv[0] - intr[2]) / intr[0], (uv[1] - intr[3]) / intr[1]])
    return undistort(xy_d, intr[4:8])


def triangulate(R_ECs, centers, uv_ns, min_baseline=MIN_BASELINE,
                min_depth=MIN_DEPTH, gn_iters=5):
    """Triangulate a point from multiple calibrated views.

    Linear (DLT) initialization followed by Gauss-Newton refinement on the
    normalized reprojection error.

    Parameters
    ----------
    R_ECs : (m, 3, 3) array
        World-to-camera rotations.
    centers : (m, 3) array
        Camera centers in the world frame.
    uv_ns : (m, 2) array
        Undistorted normalized observations.
    min_baseline : float
        Smallest acceptable spread of the camera centers.
    min_depth : float
        Smallest acceptable depth in any view.

    Returns
    -------
    (3,) array or None
        Triangulated point, or None when the geometry is rejected.
    """
    m = len(uv_ns)
    if m < 2:
        return None
    diff = centers[:, None, :] - centers[None, :, :]
    spread = np.sqrt((diff ** 2).sum(-1)).max()
    if spread < min_baseline:
        return None

    r1 = R_ECs[:, 0] - uv_ns[:, :1] * R_ECs[:, 2]
    r2 = R_ECs[:, 1] - uv_ns[:, 1:] * R_ECs[:, 2]
    A = np.concatenate([r1, r2])
    b = np.concatenate([(r1 * centers).sum(1), (r2 * centers).sum(1)])
    try:
        p = np.linalg.solve(A.T @ A, A.T @ b)
    except np.linalg.LinAlgError:
        return None

    for _ in range(gn_iters):
        p_C = np.einsum('mij,mj->mi', R_ECs, p - centers)
        z = p_C[:, 2]
        if np.any(z < 1e-6):
            break
        J0 = R_ECs[:, 0] / z[:, None] \
            - (p_C[:, 0] / z ** 2)[:, None] * R_ECs[:, 2]
        J1 = R_ECs[:, 1] / z[:, None] \
            - (p_C[:, 1] / z ** 2)[:, None] * R_ECs[:, 2]
        Jt = np.concatenate([J0, J1])
        res = np.concatenate([p_C[:, 0] / z - uv_ns[:, 0],
                              p_C[:, 1] / z - uv_ns[:, 1]])
        try:
            step = np.linalg.solve(Jt.T @ Jt, -(Jt.T @ res))
        except np.linalg.LinAlgError:
            break
        p = p + step
        if step @ step < 1e-20:
            break

    depths = np.einsum('mj,mj->m', R_ECs[:, 2], p - centers)
    if np.any(depths < min_depth):
        return None
    return p


def predict_pixel(state, cam_id, t_meas, p_F, order):
    """Predicted pixel observation of a known world point.

    The camera pose is interpolated from the clone window at the
    measurement time shifted by the current time-offset estimate.
    """
    cal = state.cameras[cam_id]
    ts, Rs, ps = state.clone_arrays()
    res = chains.interp_sensor_pose(ts, Rs, ps, t_meas, order,
                                    R_ItoS=cal.R_imu_to_cam,
                                    p_I_in_S=cal.p_imu_in_cam,
                                    t_off=cal.time_offset)
    p_C = res.R @ (p_F - res.p)
    uv, _, _ = project(p_C, cal.intrinsics)
    return uv


def feature_rows(state, cam_id, t_meas, uvs, p_F, order, chain=None):
    """Unwhitened residual rows for one feature track with a fixed point.

    Parameters
    ----------
    state : NavState
    cam_id : int
    t_meas : (m,) array
        Observation times in the camera clock.
    uvs : (m, 2) array
        Measured pixels.
    p_F : (3,) array
        Feature position in the reference frame (held fixed).
    order : int
        Interpolation order.
    chain : list of ChainResult, optional
        Per-observation sensor-pose chains, if the caller already
        interpolated them (they depend only on the state and times).

    Returns
    -------
    H : (2m, n) array
        Rows over the full error state.
    H_f : (2m, 3) array
        Rows over the feature position.
    r : (2m,) array
        Residuals.
    J_pose_interp : (m, 2, 6) array
        Per-observation rows mapped to the interpolated-pose error, used
        to inflate the noise for interpolation error.
    valid : (m,) bool array
        Observations with usable depth.
    """
    cal = state.cameras[cam_id]
    ts, Rs, ps = state.clone_arrays()
    n = state.error_dim
    m = len(t_meas)
    H = np.zeros((2 * m, n))
    H_f = np.zeros((2 * m, 3))
    r = np.zeros(2 * m)
    J_pi = np.zeros((m, 2, 6))
    valid = np.zeros(m, dtype=bool)
    for i in range(m):
        res = chain[i] if chain is not None else \
            chains.interp_sensor_pose(ts, Rs, ps, t_meas[i], order,
                                      R_ItoS=cal.R_imu_to_cam,
                                      p_I_in_S=cal.p_imu_in_cam,
                                      t_off=cal.time_offset)
        p_C = res.R @ (p_F - res.p)
        if p_C[2] < MIN_DEPTH:
            continue
        valid[i] = True
        uv_hat, J_p, J_intr = project(p_C, cal.intrinsics)
        r[2 * i:2 * i + 2] = uvs[i] - uv_hat
        rows_pose = np.hstack([-J_p @ so3.skew(p_C), -J_p @ res.R])
        H_f[2 * i:2 * i + 2] = J_p @ res.R
        J_pi[i] = rows_pose @ res.J_interp
        sl = H[2 * i:2 * i + 2]
        for k, ct in enumerate(res.clone_times):
            sl[:, state.slice_of(("clone", ct))] += rows_pose @ res.J_clone[k]
        if cal.estimate_extrinsic:
            sl[:, state.slice_of(("cam", cam_id, "ext"))] += \
                rows_pose @ res.J_ext
        if cal.estimate_intrinsics:
            sl[:, state.slice_of(("cam", cam_id, "intr"))] += J_intr
        if cal.estimate_time_offset:
            sl[:, state.slice_of(("cam", cam_id, "toff"))] += \
                (rows_pose @ res.J_toff)[:, None]
    return H, H_f, r, J_pi, valid


def process_feature(state, cam_id, t_meas, uvs, order, sigma_px,
                    interp_noise=None, chi2_level=0.95):
    """Full per-feature pipeline: triangulate, stack, whiten, project, gate.

    Parameters
    ----------
    interp_noise : callable or None
        Maps an observation time to a 6-vector of interpolated-pose error
        variances (orientation then position). None disables the
        interpolation-error term in the measurement noise.

    Returns
    -------
    (H, r) or None
        Whitened rows with the feature direction projected out, or None
        when the feature is rejected (bad geometry or gating).
    """
    cal = state.cameras[cam_id]
    ts, Rs, ps = state.clone_arrays()
    m = len(t_meas)
    chain = [chains.interp_sensor_pose(ts, Rs, ps, t_meas[i], order,
                                       R_ItoS=cal.R_imu_to_cam,
                                       p_I_in_S=cal.p_imu_in_cam,
                                       t_off=cal.time_offset)
             for i in range(m)]
    R_ECs = np.stack([res.R for res in chain])
    centers = np.stack([res.p for res in chain])
    uv_ns = np.stack([pixel_to_normalized(uvs[i], cal.intrinsics)
                      for i in range(m)])
    p_F = triangulate(R_ECs, centers, uv_ns)
    if p_F is None:
        return None

    H, H_f, r, J_pi, valid = feature_rows(state, cam_id, t_meas, uvs,
                                          p_F, order, chain=chain)
    if valid.sum() < 2:
        return None
    rows = np.repeat(valid, 2)
    H, H_f, r, J_pi = H[rows], H_f[rows], r[rows], J_pi[valid]
    t_used = np.asarray(t_meas)[valid]

    sig2 = sigma_px ** 2
    for i in range(len(t_used)):
        a, b, d = sig2, 0.0, sig2
        if interp_noise is not None:
            var6 = interp_noise(t_used[i] + cal.time_offset)
            E = J_pi[i] @ (var6[:, None] * J_pi[i].T)
            a, b, d = a + E[0, 0], b + E[0, 1], d + E[1, 1]
        # whiten the 2x2 block with a scalar Cholesky of [[a, b], [b, d]]
        l00 = np.sqrt(a)
        l10 = b / l00
        l11 = np.sqrt(d - l10 * l10)
        blk = slice(2 * i, 2 * i + 2)
        for M in (H, H_f):
            M[blk.start] /= l00
            M[blk.start + 1] = (M[blk.start + 1]
                                - l10 * M[blk.start]) / l11
        r[blk.start] /= l00
        r[blk.start + 1] = (r[blk.start + 1] - l10 * r[blk.start]) / l11

    H, r = ekf.nullspace_project(H, H_f, r)
    if H.shape[0] == 0:
        return None
    if not ekf.mahalanobis_gate(state.P, H, r, chi2_level):
        return None
    return H, r


def camera_update(state, features, order, sigma_px, interp_noise=None,
                  chi2_level=0.95):
    """Update the state from a batch of finished feature tracks.

    Parameters
    ----------
    features : list of (cam_id, t_meas, uvs)
        One entry per track.

    Returns
    -------
    int
        Number of accepted features.
    """
    blocks = []
    for cam_id, t_meas, uvs in features:
        out = process_feature(state, cam_id, t_meas, uvs, order, sigma_px,
                              interp_noise=interp_noise,
                              chi2_level=chi2_level)
        if out is not None:
            blocks.append(out)
    if not blocks:
        return 0
    H = np.vstack([b[0] for b in blocks])
    r = np.concatenate([b[1] for b in blocks])
    H, r = ekf.compress(H, r)
    if H.shape[0] > 0:
        ekf.ekf_update(state, H, r)
    return len(blocks)
