"""EKF update machinery shared by every sensor module.

All update paths follow the same pipeline: build residual rows, whiten them
so the noise is identity, optionally project out feature states, gate with a
chi-square test, compress tall stacks with a thin QR, then apply a
Joseph-form update. New state blocks whose rows are partly invertible are
added through :func:`delayed_initialize`, which splits the rows into an
initializing square system and pure-update rows.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.stats import chi2

from .errors import InitializationError
from .state import NavState

__all__ = [
    "chi2_threshold",
    "whiten",
    "mahalanobis_gate",
    "compress",
    "nullspace_project",
    "ekf_update",
    "delayed_initialize",
]

_CHI2_CACHE: dict[tuple[int, float], float] = {}


def chi2_threshold(dof: int, confidence: float = 0.95) -> float:
    """Chi-square quantile, cached (the gate runs per measurement)."""
    key = (dof, confidence)
    out = _CHI2_CACHE.get(key)
    if out is None:
        out = float(chi2.ppf(confidence, dof))
        _CHI2_CACHE[key] = out
    return out


def whiten(H: np.ndarray, r: np.ndarray, R: np.ndarray):
    """Scale rows so the measurement noise becomes identity.

    ``R`` may be a 1-d array of per-row variances or a dense covariance.
    """
    if R.ndim == 1:
        s = 1.0 / np.sqrt(R)
        return H * s[:, None], r * s
    L = np.linalg.cholesky(R)
    return solve_triangular(L, H, lower=True), solve_triangular(L, r, lower=True)


def mahalanobis_gate(
    P: np.ndarray, H: np.ndarray, r: np.ndarray, confidence: float = 0.95
) -> bool:
    """Chi-square gate on whitened rows (noise = identity)."""
    S = H @ P @ H.T
    S[np.diag_indices_from(S)] += 1.0
    try:
        c = cho_factor(S, lower=True)
        gamma = float(r @ cho_solve(c, r))
    except np.linalg.LinAlgError:
        return False
    return gamma <= chi2_threshold(len(r), confidence)


def compress(H: np.ndarray, r: np.ndarray):
    """Thin-QR measurement compression for whitened rows.

    Rotating a tall stack by Q^T preserves the information because the noise
    is isotropic; rows that QR zeroes out carry no state information and are
    dropped.
    """
    m, n = H.shape
    if m <= n:
        return H, r
    q, rr = np.linalg.qr(H)
    r_rot = q.T @ r
    keep = np.max(np.abs(rr), axis=1) > 1e-12
    return rr[keep], r_rot[keep]

def nullspace_project(Hx: np.ndarray, Hf: np.ndarray, r: np.ndarray):
    """Project rows onto the left nullspace of ``Hf`` (whitened rows only).

    Used to remove a triangulated feature from the update without adding it
    to the state. Returns the projected (Hx, r); output has
    ``rows - rank(Hf)`` rows.
    """
    q, rr = np.linalg.qr(Hf, mode="complete")
    diag = np.abs(np.diagonal(rr))
    scale = diag[0] if diag.size and diag[0] > 0.0 else 1.0
    rank = int(np.sum(diag > 1e-12 * scale))
    n = q[:, rank:]
    return n.T @ Hx, n.T @ r


def ekf_update(state: NavState, H: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Joseph-form update with whitened rows; applies and returns dx."""
    P = state.P
    S = H @ P @ H.T
    S[np.diag_indices_from(S)] += 1.0
    c = cho_factor(S, lower=True)
    K = cho_solve(c, H @ P).T
    dx = K @ r
    ikh = -K @ H
    ikh[np.diag_indices_from(ikh)] += 1.0
    P = ikh @ P @ ikh.T + K @ K.T
    state.P = 0.5 * (P + P.T)
    state.boxplus(dx)
    return dx


def delayed_initialize(
    state: NavState,
    key: tuple,
    dim: int,
    register: Callable[[], None],
    H_new: np.ndarray,
    H_old: np.ndarray,
    r: np.ndarray,
) -> np.ndarray:
    """Initialize a new state block from rows that also involve old states.

    All rows must be pre-whitened. The stack ``r = H_new x_new + H_old x_old
    + n`` is QR-rotated so the top ``dim`` rows form an invertible square
    system in the new block; the remaining rows update the existing state
    first, then the square system defines the new block's mean correction,
    covariance, and cross covariance. ``register`` must attach the new block
    object (at its linearization point) to the state so the layout can grow.

    Returns the correction applied to the new block. Raises
    :class:`InitializationError` if the rows cannot determine the block.
    """
    m = H_new.shape[0]
    if m < dim:
        raise InitializationError("not enough rows to initialize block")
    q, rr = np.linalg.qr(H_new, mode="complete")
    A = rr[:dim]
    diag = np.abs(np.diagonal(A))
    if diag.min() < 1e-10 * max(diag.max(), 1.0):
        raise InitializationError("new block is unobservable from these rows")
    H_old_rot = q.T @ H_old
    r_rot = q.T @ r
    B, r1 = H_old_rot[:dim], r_rot[:dim]
    dx_old = np.zeros(state.error_dim)
    if m > dim:
        dx_old = ekf_update(state, H_old_rot[dim:], r_rot[dim:])
    P = state.P
    Ainv = solve_triangular(A, np.eye(dim))
    BP = B @ P
    P_nn = Ainv @ (BP @ B.T + np.eye(dim)) @ Ainv.T
    P_no = -Ainv @ BP
    delta = Ainv @ (r1 - B @ dx_old)
    register()
    state.insert_block(key, dim, 0.5 * (P_nn + P_nn.T), P_no)
    dx_full = np.zeros(state.error_dim)
    dx_full[state.slice_of(key)] = delta
    state.boxplus(dx_full)
    return delta
