"""SO(3) primitives: exponential/logarithm maps and their Jacobians.

All rotations in this package are 3x3 matrices with the global-to-local
reading: ``R_AtoB`` maps coordinates of a vector from frame A to frame B, so
a world-to-body attitude is ``R_WtoI`` and composing onto a sensor is
``R_ItoS @ R_WtoI``. Perturbations are left-multiplicative,
``R = exp_so3(dtheta) @ R_hat``, and every Jacobian in the estimator is
derived under that convention.

Closed forms switch to their series expansions below
``SERIES_THRESHOLD`` (1e-7 rad). The Jacobian inverses are singular at
nonzero multiples of 2*pi and refuse such inputs.

References: Rodrigues' formula and the standard left/right Jacobian
identities J_r(t) = J_l(-t), J_l(t)^-1 = I - t^/2 + c(|t|) t^^2.
"""

from __future__ import annotations

import numpy as np

from .accel import jit

__all__ = [
    "SERIES_THRESHOLD",
    "skew",
    "vee",
    "exp_so3",
    "log_so3",
    "left_jacobian",
    "right_jacobian",
    "left_jacobian_inv",
    "right_jacobian_inv",
    "gravity_to_rotation",
    "rot_z",
]

SERIES_THRESHOLD = 1e-7

_TWO_PI = 2.0 * np.pi


@jit
def skew(v):
    """Map a 3-vector to the matrix S with S @ x = cross(v, x)."""
    out = np.empty((3, 3))
    out[0, 0] = 0.0
    out[0, 1] = -v[2]
    out[0, 2] = v[1]
    out[1, 0] = v[2]
    out[1, 1] = 0.0
    out[1, 2] = -v[0]
    out[2, 0] = -v[1]
    out[2, 1] = v[0]
    out[2, 2] = 0.0
    return out


@jit
def vee(m):
    """Inverse of :func:`skew` (antisymmetric part is assumed)."""
    out = np.empty(3)
    out[0] = 0.5 * (m[2, 1] - m[1, 2])
    out[1] = 0.5 * (m[0, 2] - m[2, 0])
    out[2] = 0.5 * (m[1, 0] - m[0, 1])
    return out


@jit
def exp_so3(theta):
    """Rodrigues' formula, series below SERIES_THRESHOLD."""
    t2 = theta[0] * theta[0] + theta[1] * theta[1] + theta[2] * theta[2]
    k = skew(theta)
    if t2 < SERIES_THRESHOLD * SERIES_THRESHOLD:
        a = 1.0 - t2 / 6.0
        b = 0.5 - t2 / 24.0
    else:
        t = np.sqrt(t2)
        a = np.sin(t) / t
        h = np.sin(0.5 * t)
        b = 2.0 * h * h / t2  # (1 - cos t)/t^2 without cancellation
    return np.eye(3) + a * k + b * (k @ k)


@jit
def _check_rotation(r):
    """Orthonormality residual max|R R^T - I|; also guards det sign."""
    res = 0.0
    for i in range(3):
        for j in range(3):
            s = 0.0
            for k in range(3):
                s += r[i, k] * r[j, k]
            if i == j:
                s -= 1.0
            if abs(s) > res:
                res = abs(s)
    det = (
        r[0, 0] * (r[1, 1] * r[2, 2] - r[1, 2] * r[2, 1])
        - r[0, 1] * (r[1, 0] * r[2, 2] - r[1, 2] * r[2, 0])
        + r[0, 2] * (r[1, 0] * r[2, 1] - r[1, 1] * r[2, 0])
    )
    if det < 0.0:
        res = 1.0
    return res


@jit
def log_so3(r):
    """Rotation-matrix logarithm, returning the rotation vector in (-pi, pi].

    Raises ValueError if the input fails the orthonormality check
    (residual above 1e-6) or has negative determinant.
    """
    if _check_rotation(r) > 1e-6:
        raise ValueError("log_so3: input is not a rotation matrix")
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    c = 0.5 * (tr - 1.0)
    if c > 1.0:
        c = 1.0
    if c < -1.0:
        c = -1.0
    t = np.arccos(c)
    w = vee(r)
    if t < SERIES_THRESHOLD:
        # sin(t)/t ~ 1 - t^2/6: invert the factor on the antisymmetric part
        return w * (1.0 + t * t / 6.0)
    if t > np.pi - 1e-5:
        # near pi the antisymmetric part vanishes; use a a^T = (R + I)/2
        ax = np.empty(3)
        ax[0] = np.sqrt(max(0.0, (r[0, 0] + 1.0) * 0.5))
        ax[1] = np.sqrt(max(0.0, (r[1, 1] + 1.0) * 0.5))
        ax[2] = np.sqrt(max(0.0, (r[2, 2] + 1.0) * 0.5))
        # pick the largest component as sign anchor, fix the others from
        # the off-diagonal products a_i a_j = (R_ij + R_ji)/4
        imax = 0
        if ax[1] > ax[imax]:
            imax = 1
        if ax[2] > ax[imax]:
            imax = 2
        for j in range(3):
            if j != imax:
                s = 0.25 * (r[imax, j] + r[j, imax])
                if ax[imax] > 0.0:
                    ax[j] = s / ax[imax]
        n = np.sqrt(ax[0] * ax[0] + ax[1] * ax[1] + ax[2] * ax[2])
        if n > 0.0:
            ax = ax / n
        # below exactly pi the antisymmetric part still carries the sign
        sgn = ax[0] * w[0] + ax[1] * w[1] + ax[2] * w[2]
        if sgn < 0.0:
            ax = -ax
        return ax * t
    return w * (t / np.sin(t))


@jit
def left_jacobian(theta):
    """Left Jacobian of SO(3): d Exp(t+d)/dd = J_l(t) to first order."""
    t2 = theta[0] * theta[0] + theta[1] * theta[1] + theta[2] * theta[2]
    k = skew(theta)
    if t2 < SERIES_THRESHOLD * SERIES_THRESHOLD:
        b = 0.5 - t2 / 24.0
        c = 1.0 / 6.0 - t2 / 120.0
    else:
        t = np.sqrt(t2)
        h = np.sin(0.5 * t)
        b = 2.0 * h * h / t2
        c = (t - np.sin(t)) / (t2 * t)
    return np.eye(3) + b * k + c * (k @ k)


@jit
def right_jacobian(theta):
    """Right Jacobian, J_r(t) = J_l(-t)."""
    return left_jacobian(-theta)


@jit
def _check_jacobian_invertible(t):
    if t > np.pi:
        k = np.floor(t / _TWO_PI + 0.5)
        if k >= 1.0 and abs(t - _TWO_PI * k) < 1e-6:
            raise ValueError(
                "SO(3) Jacobian inverse is singular at multiples of 2*pi"
            )


@jit
def left_jacobian_inv(theta):
    """Inverse left Jacobian; rejects |theta| at nonzero multiples of 2*pi."""
    t2 = theta[0] * theta[0] + theta[1] * theta[1] + theta[2] * theta[2]
    t = np.sqrt(t2)
    _check_jacobian_invertible(t)
    k = skew(theta)
    if t < SERIES_THRESHOLD:
        c = 1.0 / 12.0 + t2 / 720.0
    else:
        c = 1.0 / t2 - (1.0 + np.cos(t)) / (2.0 * t * np.sin(t))
    return np.eye(3) - 0.5 * k + c * (k @ k)


@jit
def right_jacobian_inv(theta):
    """Inverse right Jacobian, J_r^-1(t) = J_l^-1(-t)."""
    return left_jacobian_inv(-theta)


@jit
def gravity_to_rotation(g):
    """Gravity-aligned attitude from a measured gravity direction.

    Given the gravity-reaction direction ``g`` expressed in the body frame
    (e.g. the averaged accelerometer reading at rest), returns the
    global-to-local rotation ``R_WtoI`` of a world frame whose z axis is up:
    the third *column* of the result is ``g/|g|``, so
    ``R.T @ g = (0, 0, |g|)``. Yaw is fixed by Gram-Schmidt: the world x
    axis is the projection of the body x axis onto the horizontal plane
    (falling back to body y when g is within ~1e-6 of the body x axis).

    Raises ValueError on a zero-length input.
    """
    n = np.sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2])
    if n < 1e-12:
        raise ValueError("gravity_to_rotation: zero-length input")
    z = g / n
    seed = np.zeros(3)
    seed[0] = 1.0
    d = seed[0] * z[0] + seed[1] * z[1] + seed[2] * z[2]
    x = seed - d * z
    nx = np.sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
    if nx < 1e-6:
        seed = np.zeros(3)
        seed[1] = 1.0
        d = seed[0] * z[0] + seed[1] * z[1] + seed[2] * z[2]
        x = seed - d * z
        nx = np.sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
    x = x / nx
    y = np.empty(3)
    y[0] = z[1] * x[2] - z[2] * x[1]
    y[1] = z[2] * x[0] - z[0] * x[2]
    y[2] = z[0] * x[1] - z[1] * x[0]
    out = np.empty((3, 3))
    for i in range(3):
        out[i, 0] = x[i]
        out[i, 1] = y[i]
        out[i, 2] = z[i]
    return out


@jit
def rot_z(yaw):
    """Rotation by ``yaw`` about the z axis."""
    c = np.cos(yaw)
    s = np.sin(yaw)
    out = np.eye(3)
    out[0, 0] = c
    out[0, 1] = -s
    out[1, 0] = s
    out[1, 1] = c
    return out
