"""Global position updates and local-to-global frame initialization.

While the filter runs in its local odometry frame, position fixes cannot be
applied directly; they are buffered together with keyframe clones. Once the
buffered fixes span enough horizontal baseline, the 4-DOF transform between
the frames (yaw and translation; roll and pitch are shared through gravity)
is estimated in closed form, refined jointly with the existing state by
delayed initialization, and the whole state is then re-expressed in the
global frame with a consistent covariance warp. From that point fixes are
applied as ordinary tight updates through the lever-arm chain.
"""

from dataclasses import dataclass, field

import numpy as np

from . import chains, ekf, so3
from .errors import InitializationError
from .state import FrameTransform

E3 = np.array([0.0, 0.0, 1.0])

MIN_BASELINE = 2.0
MAX_FIXES = 50


def antenna_position(state, gnss_id, t_fix, order):
    """Interpolated antenna position in the nav frame, with rows.

    Returns
    -------
    p : (3,) array
    blocks : dict of error-state key -> (3, d) rows
    res : ChainResult
    """
    cal = state.gnss[gnss_id]
    ts, Rs, ps = state.clone_arrays()
    res = chains.interp_sensor_pose(ts, Rs, ps, t_fix, order,
                                    R_ItoS=None, p_I_in_S=None,
                                    lever_arm=cal.lever_arm,
                                    t_off=cal.time_offset)
    blocks = {}
    for k, ct in enumerate(res.clone_times):
        blocks[("clone", ct)] = res.J_clone[k][3:6]
    if cal.estimate_lever_arm:
        blocks[("gnss", gnss_id, "arm")] = res.J_arm
    if cal.estimate_time_offset:
        blocks[("gnss", gnss_id, "toff")] = res.J_toff[3:6, None]
    return res.p, blocks, res


def position_update(state, gnss_id, t_fix, z, std, order,
                    interp_noise=None, chi2_level=0.95):
    """Tight position-fix update (nav frame must match the fix frame).

    Returns True when applied, False when gated out.
    """
    cal = state.gnss[gnss_id]
    p_hat, blocks, res = antenna_position(state, gnss_id, t_fix, order)
    r = np.asarray(z, float) - p_hat
    H = np.zeros((3, state.error_dim))
    for key, rows in blocks.items():
        H[:, state.slice_of(key)] = rows
    R = np.diag(np.asarray(std, float) ** 2)
    if interp_noise is not None:
        var6 = interp_noise(t_fix + cal.time_offset)
        J = res.J_interp[3:6]
        R = R + J @ (var6[:, None] * J.T)
    H, r = ekf.whiten(H, r, R)
    if not ekf.mahalanobis_gate(state.P, H, r, chi2_level):
        return False
    ekf.ekf_update(state, H, r)
    return True


def pose_update(state, t_clone, z_R, z_p, std, R_ItoX, p_I_in_X,
                chi2_level=0.95):
    """Six-DOF global pose measurement aligned with a clone time.

    ``z_R`` is the measured world-to-sensor rotation, ``z_p`` the sensor
    position; ``std`` holds six standard deviations (rotation then
    position). Returns True when applied.
    """
    c = state.clones[t_clone]
    res = chains.clone_sensor_pose(c.R, c.p, c.t, c.v, c.omega,
                                   R_ItoX, p_I_in_X)
    r = np.concatenate([so3.log_so3(z_R @ res.R.T), z_p - res.p])
    H = np.zeros((6, state.error_dim))
    H[:, state.slice_of(("clone", t_clone))] = res.J_clone[0]
    H, r = ekf.whiten(H, r, np.asarray(std, float) ** 2)
    if not ekf.mahalanobis_gate(state.P, H, r, chi2_level):
        return False
    ekf.ekf_update(state, H, r)
    return True


def align_yaw_translation(a, b):
    """Yaw and translation best mapping points ``a`` onto points ``b``.

    Solves min over (yaw, p) of sum ||b_i - Rz(yaw) a_i - p||^2; the yaw
    normal equations reduce to a single arctangent of the centered cross
    and dot sums. Points from multiple receivers may be stacked.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    sin_sum = float(np.sum(ac[:, 0] * bc[:, 1] - ac[:, 1] * bc[:, 0]))
    cos_sum = float(np.sum(ac[:, 0] * bc[:, 0] + ac[:, 1] * bc[:, 1]))
    yaw = float(np.arctan2(sin_sum, cos_sum))
    p = b.mean(axis=0) - so3.rot_z(yaw) @ a.mean(axis=0)
    return yaw, p


@dataclass
class BufferedFix:
    gnss_id: int
    t: float
    z: np.ndarray
    std: np.ndarray


@dataclass
class FrameInitializer:
    """Buffers fixes in local mode and performs the frame switch."""

    min_baseline: float = MIN_BASELINE
    max_fixes: int = MAX_FIXES
    fixes: list = field(default_factory=list)

    def add_fix(self, state, gnss_id, t_fix, z, std):
        """Buffer one fix and pin its bracketing clones as keyframes."""
        ts = state.clone_times()
        if len(ts) < 2 or t_fix < ts[0] or t_fix > ts[-1]:
            return
        idx = np.searchsorted(ts, t_fix)
        for j in (max(idx - 1, 0), min(idx, len(ts) - 1)):
            state.clones[ts[j]].keyframe = True
        self.fixes.append(BufferedFix(gnss_id, float(t_fix),
                                      np.asarray(z, float),
                                      np.asarray(std, float)))
        if len(self.fixes) > self.max_fixes:
            dropped = self.fixes.pop(0)
            self._unmark_unused(state, dropped)

    def _unmark_unused(self, state, dropped):
        ts = state.clone_times()
        used = set()
        for f in self.fixes:
            idx = np.searchsorted(ts, f.t)
            used.add(max(idx - 1, 0))
            used.add(min(idx, len(ts) - 1))
        idx = np.searchsorted(ts, dropped.t)
        for j in (max(idx - 1, 0), min(idx, len(ts) - 1)):
            if j not in used:
                state.clones[ts[j]].keyframe = False

    def baseline(self):
        """Largest horizontal distance between buffered fixes."""
        if len(self.fixes) < 2:
            return 0.0
        z = np.stack([f.z[0:2] for f in self.fixes])
        d = z[:, None, :] - z[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())

    def ready(self):
        return self.baseline() > self.min_baseline

    def initial_guess(self, state, order=1):
        """Closed-form yaw and translation from fix/antenna pairs."""
        a = np.stack([antenna_position(state, f.gnss_id, f.t, order)[0]
                      for f in self.fixes])
        b = np.stack([f.z for f in self.fixes])
        return align_yaw_translation(a, b)

    def try_switch(self, state, order=1):
        """Initialize, refine, and apply the frame switch.

        Returns the final FrameTransform on success, None when the
        baseline is not yet sufficient. The state is re-expressed in the
        global frame with a first-order-consistent covariance.
        """
        if not self.ready():
            return None
        yaw, p0 = self.initial_guess(state, order)

        def register():
            state.frame_transform = FrameTransform(R=so3.rot_z(yaw),
                                                   p=p0.copy())

        m = 3 * len(self.fixes)
        H_new = np.zeros((m, 4))
        H_old = np.zeros((m, state.error_dim))
        r = np.zeros(m)
        R_we = so3.rot_z(yaw)
        w = np.zeros(m)
        for i, f in enumerate(self.fixes):
            a, blocks, _ = antenna_position(state, f.gnss_id, f.t, order)
            sl = slice(3 * i, 3 * i + 3)
            H_new[sl, 0] = so3.skew(E3) @ (R_we @ a)
            H_new[sl, 1:4] = np.eye(3)
            for key, rows in blocks.items():
                H_old[sl, state.slice_of(key)] = R_we @ rows
            r[sl] = f.z - (p0 + R_we @ a)
            w[sl] = 1.0 / f.std
        H_new *= w[:, None]
        H_old *= w[:, None]
        r *= w
        try:
            ekf.delayed_initialize(state, ("frame",), 4, register,
                                   H_new, H_old, r)
        except InitializationError:
            return None
        ft = warp_to_global(state)
        for c in state.clones.values():
            c.keyframe = False
        self.fixes.clear()
        return ft


def warp_to_global(state):
    """Re-express the whole state in the global frame and drop the block.

    The covariance is mapped by the rectangular Jacobian of the warp with
    respect to all pre-warp errors including the transform itself, which
    simultaneously marginalizes the transform block.
    """
    ft = state.frame_transform
    R_we, p_we = ft.R.copy(), ft.p.copy()
    fsl = state.slice_of(("frame",))
    n = state.error_dim
    psi = np.eye(n)

    def pose_rows(sl_theta, sl_p, R_wi, p_w):
        # attitude: theta_E = theta_W - psi * R_EtoI e3
        R_ei = R_wi @ R_we.T
        psi[sl_theta, fsl.start] = -(R_ei @ E3)
        # position: p_E = R_we p_W + p_we (+ yaw coupling)
        psi[sl_p, sl_p] = R_we
        psi[sl_p, fsl.start] = so3.skew(E3) @ (R_we @ p_w)
        psi[sl_p, fsl.start + 1:fsl.stop] = np.eye(3)

    isl = state.slice_of(("imu",))
    th = slice(isl.start, isl.start + 3)
    pp = slice(isl.start + 3, isl.start + 6)
    vv = slice(isl.start + 6, isl.start + 9)
    pose_rows(th, pp, state.imu.R, state.imu.p)
    psi[vv, vv] = R_we
    psi[vv, fsl.start] = so3.skew(E3) @ (R_we @ state.imu.v)
    for t in state.clone_times():
        csl = state.slice_of(("clone", t))
        c = state.clones[t]
        pose_rows(slice(csl.start, csl.start + 3),
                  slice(csl.start + 3, csl.start + 6), c.R, c.p)

    P = psi @ state.P @ psi.T
    keep = np.ones(n, dtype=bool)
    keep[fsl] = False
    P = P[np.ix_(keep, keep)]

    state.imu.R = state.imu.R @ R_we.T
    state.imu.p = p_we + R_we @ state.imu.p
    state.imu.v = R_we @ state.imu.v
    for c in state.clones.values():
        c.R = c.R @ R_we.T
        c.p = p_we + R_we @ c.p
        c.v = R_we @ c.v
    state.frame_transform = None
    state.frame_tag = "global"
    state._rebuild_layout()
    state.P = 0.5 * (P + P.T)
    return FrameTransform(R=R_we, p=p_we)
