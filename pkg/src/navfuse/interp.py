"""On-manifold pose interpolation with analytic Jacobians and error model.

A measurement at time t (sensor clock) is expressed on the IMU clock as
t + t_off and evaluated against an interpolated pose built from n+1 clones:

    s(dt) = sum_i a_i dt^i,   a = V^{-1} [Log(R_j R_0^T)]_j
    R(t)  = Exp(s) R_0
    p(t)  = p_0 + sum_i b_i dt^i,  b = V^{-1} [p_j - p_0]_j

where V is the Vandermonde system of the control times relative to the first
control pose (times are normalized by the window span before inversion to
keep V well conditioned). n = 1 is plain geodesic/linear interpolation; the
same code path serves every order.

The Jacobian blocks returned are exact first-order sensitivities of the
interpolated pose error (left-multiplicative convention) with respect to
each control pose error and to the time offset. Writing c_j for the scalar
weight of control pose j at the query time (sum_j c_j over j>=1, and
c_0 = 1 - sum c_j for position):

    d(theta')/d(theta_j) = c_j J_l(s) J_l^{-1}(L_j)          j >= 1
    d(theta')/d(theta_0) = Exp(s) - J_l(s) sum_j c_j J_r^{-1}(L_j)
    d(p')/d(p_j)         = c_j I,   d(p')/d(p_0) = (1 - sum c_j) I
    d(theta')/d(t_off)   = J_l(s) ds/dt,   d(p')/d(t_off) = dp/dt

These reduce to (I, 0) / (0, I) at the window ends and make interpolation
exact at control times, which the tests pin down.

Interpolation error is charged to the measurement as extra noise with
standard deviations s_o(order, hz) * alpha on orientation and
s_p(order, hz) * a on position, where alpha and a are the smoothed angular
acceleration and gravity-compensated acceleration magnitudes and the slopes
come from a pre-fit table (see :class:`SlopeTable` and :func:`fit_slopes`).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .accel import jit
from .so3 import exp_so3, left_jacobian, left_jacobian_inv, log_so3

__all__ = [
    "interpolate_pose",
    "pose_jacobian_6x6",
    "SlopeTable",
    "fit_slopes",
    "isotonic_decreasing",
    "select_clone_rate",
    "config_hash",
]


@jit
def _interp_core(ts, Rs, ps, t_query):
    """Shared kernel: returns (R_q, p_q, J_rot (n+1,3,3), c (n+1,),
    dtheta_dt (3,), dp_dt (3,))."""
    n = len(ts) - 1
    h = ts[n] - ts[0]
    # relative log-rotations and positions w.r.t. the first control pose
    L = np.empty((n, 3))
    dp = np.empty((n, 3))
    R0T = Rs[0].T
    for j in range(n):
        L[j] = log_so3(Rs[j + 1] @ R0T)
        dp[j] = ps[j + 1] - ps[0]
    # normalized Vandermonde
    V = np.empty((n, n))
    for j in range(n):
        tau = (ts[j + 1] - ts[0]) / h
        acc = tau
        for i in range(n):
            V[j, i] = acc
            acc *= tau
    a = np.linalg.solve(V, L)
    b = np.linalg.solve(V, dp)
    tq = (t_query - ts[0]) / h
    # query weights c_j = sum_i tq^i Vinv[i, j]; cheaper via solving V^T c = m
    m = np.empty(n)
    acc = tq
    dm = np.empty(n)
    for i in range(n):
        m[i] = acc
        dm[i] = (i + 1) * (acc / tq) if tq != 0.0 else (1.0 if i == 0 else 0.0)
        acc *= tq
    c = np.linalg.solve(V.T, m)

    s = np.zeros(3)
    p_q = ps[0].copy()
    ds_dt = np.zeros(3)
    dp_dt = np.zeros(3)
    acc = tq
    for i in range(n):
        s += a[i] * m[i]
        p_q += b[i] * m[i]
        ds_dt += a[i] * dm[i]
        dp_dt += b[i] * dm[i]
    R_q = exp_so3(s) @ Rs[0]
    jls = left_jacobian(s)
    dtheta_dt = (jls @ ds_dt) / h
    dp_dt = dp_dt / h

    J_rot = np.empty((n + 1, 3, 3))
    cw = np.empty(n + 1)
    j0 = exp_so3(s).copy()
    for j in range(n):
        jlinv = left_jacobian_inv(L[j])
        J_rot[j + 1] = c[j] * (jls @ jlinv)
        # J_r^{-1}(L) = J_l^{-1}(L) Exp(L)
        j0 = j0 - c[j] * (jls @ (jlinv @ (Rs[j + 1] @ R0T)))
        cw[j + 1] = c[j]
    J_rot[0] = j0
    cw[0] = 1.0
    for j in range(n):
        cw[0] -= c[j]
    return R_q, p_q, J_rot, cw, dtheta_dt, dp_dt


def interpolate_pose(ts, Rs, ps, t_query):
    """Interpolate the pose window at ``t_query`` (IMU clock).

    Parameters
    ----------
    ts : (n+1,) control times, strictly increasing
    Rs : (n+1, 3, 3) global-to-local control rotations
    ps : (n+1, 3) control positions
    t_query : float inside [ts[0], ts[-1]] (mild extrapolation allowed)

    Returns
    -------
    R_q, p_q : interpolated pose
    J_rot : (n+1, 3, 3) rotation-error blocks per control pose
    c : (n+1,) position weights per control pose
    dtheta_dt, dp_dt : (3,) sensitivities to the time offset
    """
    ts = np.asarray(ts, float)
    Rs = np.asarray(Rs, float)
    ps = np.asarray(ps, float)
    if len(ts) < 2:
        raise ValueError("interpolation needs at least two control poses")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("control times must be strictly increasing")
    return _interp_core(ts, Rs, ps, float(t_query))


def pose_jacobian_6x6(J_rot, c):
    """Assemble the (n+1) 6x6 blocks d(pose')/d(pose_j) from kernel output."""
    n1 = J_rot.shape[0]
    out = np.zeros((n1, 6, 6))
    for j in range(n1):
        out[j, 0:3, 0:3] = J_rot[j]
        out[j, 3:6, 3:6] = c[j] * np.eye(3)
    return out


# --------------------------------------------------------------------------
# interpolation error model


def config_hash(cfg: dict) -> str:
    """Stable short hash of the table-generating configuration."""
    blob = json.dumps(cfg, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class SlopeTable:
    """Error-slope table on the (order, clone-rate) grid.

    ``s_o`` maps angular acceleration (rad/s^2) to orientation error (rad);
    ``s_p`` maps acceleration (m/s^2) to position error (m).
    """

    orders: np.ndarray  # (k,) int
    rates: np.ndarray  # (k,) float, Hz
    s_o: np.ndarray  # (k,)
    s_p: np.ndarray  # (k,)
    meta: str = ""

    def lookup(self, order: int, hz: float) -> tuple[float, float]:
        """Exact-match lookup with nearest-neighbor fallback off-grid."""
        exact = (self.orders == order) & (np.abs(self.rates - hz) < 1e-9)
        if np.any(exact):
            i = int(np.argmax(exact))
            return float(self.s_o[i]), float(self.s_p[i])
        d = (np.log(self.rates) - np.log(hz)) ** 2 + (self.orders - order) ** 2
        i = int(np.argmin(d))
        return float(self.s_o[i]), float(self.s_p[i])

    def noise_std(self, order: int, hz: float, alpha: float, acc: float):
        """(sigma_orientation, sigma_position) for the current motion."""
        so, sp = self.lookup(order, hz)
        return so * alpha, sp * acc

    def save(self, path: str | Path) -> None:
        lines = ["# config_hash=" + (self.meta or "unknown")]
        lines.append("order,hz,s_o,s_p")
        for o, r, so, sp in zip(self.orders, self.rates, self.s_o, self.s_p):
            lines.append(f"{int(o)},{r:g},{so:.10e},{sp:.10e}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SlopeTable":
        meta = ""
        rows = []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "config_hash=" in line:
                    meta = line.split("config_hash=")[1].strip()
                continue
            if line.startswith("order"):
                continue
            o, r, so, sp = line.split(",")
            rows.append((int(o), float(r), float(so), float(sp)))
        if not rows:
            raise ValueError(f"empty slope table: {path}")
        arr = np.array(rows)
        return cls(
            orders=arr[:, 0].astype(int),
            rates=arr[:, 1],
            s_o=arr[:, 2],
            s_p=arr[:, 3],
            meta=meta,
        )


def isotonic_decreasing(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted isotonic regression, non-increasing (PAV on -y)."""
    y = np.asarray(y, float)
    w = np.asarray(w, float)
    vals = list(-y)
    wts = list(w)
    # pool adjacent violators for the non-decreasing problem on -y
    out_v: list[float] = []
    out_w: list[float] = []
    out_n: list[int] = []
    for v, wt in zip(vals, wts):
        cv, cw, cn = v, wt, 1
        while out_v and out_v[-1] > cv:
            pv, pw, pn = out_v.pop(), out_w.pop(), out_n.pop()
            cv = (pv * pw + cv * cw) / (pw + cw)
            cw += pw
            cn += pn
        out_v.append(cv)
        out_w.append(cw)
        out_n.append(cn)
    fitted = np.empty_like(y)
    i = 0
    for v, n in zip(out_v, out_n):
        fitted[i : i + n] = -v
        i += n
    return fitted


def fit_slopes(
    x: np.ndarray,
    err: np.ndarray,
    bin_width: float,
    min_count: int = 30,
) -> float:
    """Zero-intercept WLS slope of err vs x from binned medians.

    Samples are grouped into bins of ``bin_width``; bins with fewer than
    ``min_count`` samples are dropped; each surviving bin contributes its
    (median x, median err) weighted by its count.
    """
    x = np.asarray(x, float)
    err = np.asarray(err, float)
    if x.size == 0:
        return 0.0
    idx = np.floor(x / bin_width).astype(int)
    num, den = 0.0, 0.0
    for b in np.unique(idx):
        sel = idx == b
        cnt = int(np.sum(sel))
        if cnt < min_count:
            continue
        xb = float(np.median(x[sel]))
        yb = float(np.median(err[sel]))
        num += cnt * xb * yb
        den += cnt * xb * xb
    if den == 0.0:
        return 0.0
    return num / den


def monotone_table(
    orders: np.ndarray,
    rates: np.ndarray,
    s: np.ndarray,
    w: np.ndarray,
    passes: int = 3,
) -> np.ndarray:
    """Enforce non-increasing slopes along both the rate and order axes.

    Alternating PAV sweeps over rows (fixed order, increasing rate) and
    columns (fixed rate, increasing order).
    """
    s = np.asarray(s, float).copy()
    uo = np.unique(orders)
    ur = np.unique(rates)
    for _ in range(passes):
        for o in uo:
            sel = np.where(orders == o)[0]
            sel = sel[np.argsort(rates[sel])]
            s[sel] = isotonic_decreasing(s[sel], w[sel])
        for r in ur:
            sel = np.where(np.abs(rates - r) < 1e-9)[0]
            sel = sel[np.argsort(orders[sel])]
            s[sel] = isotonic_decreasing(s[sel], w[sel])
    return s


def select_clone_rate(
    table: SlopeTable,
    order: int,
    alpha: float,
    acc: float,
    rates: list[float],
    gamma_o: float = 7e-3,
    gamma_p: float = 3e-3,
) -> float:
    """Lowest candidate clone rate whose modeled interpolation error stays
    within the orientation/position budgets; the highest rate otherwise."""
    for hz in sorted(rates):
        so, sp = table.lookup(order, hz)
        if so * alpha < gamma_o and sp * acc < gamma_p:
            return hz
    return max(rates)
