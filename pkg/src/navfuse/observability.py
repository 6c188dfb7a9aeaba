"""Observability diagnostics for position-aided inertial estimation.

Two regimes are analyzed. While the estimator runs in a local odometry
frame and fuses global position fixes through a frame transform, four
error directions are invisible to every fix: the transform translation
and a joint rotation of trajectory and transform about gravity. This
module builds the closed-form error-state transition and fix rows for
the reduced state

    [attitude, position, velocity, frame rotation, frame translation]

and checks that the analytic null basis annihilates the stacked
observability matrix. The frame rotation is carried as a full 3-DOF
block here; the filter's yaw-only parametrization is its projection.

Once the state is expressed directly in the fix frame (transform
marginalized), position fixes under generic motion determine the full
15-dim inertial state. The global-mode tool composes the filter's own
bias-coupled step transitions along a trajectory and reports the rank
of the stacked observability matrix. Degenerate motion (for instance a
static platform) legitimately lowers the rank; the tool reports it
rather than asserting.

All expressions follow the estimator's conventions: rotations map world
to sensor and attitude errors are left-multiplicative, R = Exp(theta) R_hat.
"""

from dataclasses import dataclass

import numpy as np

from . import propagation, so3

GRAVITY_VEC = np.array([0.0, 0.0, propagation.GRAVITY])


def local_transition(R0, p0, v0, Rk, pk, vk, dt):
    """Closed-form 15x15 error transition from time 0 to k.

    Valid for any inputs because the attitude error transports the whole
    trajectory rigidly; the gravity-compensated position and velocity
    differences carry the coupling.
    """
    yp = pk - p0 - v0 * dt + 0.5 * GRAVITY_VEC * dt * dt
    yv = vk - v0 + GRAVITY_VEC * dt
    phi = np.eye(15)
    phi[0:3, 0:3] = Rk @ R0.T
    phi[3:6, 0:3] = so3.skew(yp) @ R0.T
    phi[3:6, 6:9] = dt * np.eye(3)
    phi[6:9, 0:3] = so3.skew(yv) @ R0.T
    return phi


def local_rows(R_we, pk):
    """Position-fix rows for the reduced local state (3x15)."""
    H = np.zeros((3, 15))
    H[:, 3:6] = R_we
    H[:, 9:12] = -so3.skew(R_we @ pk)
    H[:, 12:15] = np.eye(3)
    return H


def local_nullspace(R0, p0, v0, R_we):
    """Analytic 15x4 null basis: frame translation and yaw about gravity."""
    g = GRAVITY_VEC
    N = np.zeros((15, 4))
    N[3:6, 0:3] = np.eye(3)
    N[12:15, 0:3] = -R_we
    N[0:3, 3] = R0 @ g
    N[3:6, 3] = so3.skew(p0) @ g
    N[6:9, 3] = so3.skew(v0) @ g
    N[9:12, 3] = R_we @ g
    return N


def local_observability(R0, p0, v0, R_we, steps):
    """Stack fix rows over ``steps`` of (Rk, pk, vk, dt) tuples.

    Returns (O, N, max |O N|). The first block row measures at time 0.
    """
    rows = [local_rows(R_we, p0)]
    for Rk, pk, vk, dt in steps:
        rows.append(local_rows(R_we, pk) @ local_transition(R0, p0, v0,
                                                            Rk, pk, vk, dt))
    O = np.vstack(rows)
    N = local_nullspace(R0, p0, v0, R_we)
    return O, N, float(np.abs(O @ N).max())


def global_observability(R0, p0, v0, bg, ba, omegas, accels, dt):
    """Rank of the stacked fix rows through composed step transitions.

    ``omegas`` and ``accels`` are measured (bias-inclusive) IMU samples,
    one per held-input step of length ``dt``. Returns (rank, singular
    values) of the (3(K+1) x 15) observability matrix over the error
    state (theta, p, v, bg, ba).
    """
    R, p, v = R0.copy(), p0.copy(), v0.copy()
    phi_acc = np.eye(15)
    pick = np.zeros((3, 15))
    pick[:, 3:6] = np.eye(3)
    rows = [pick.copy()]
    for w, a in zip(omegas, accels):
        R, p, v, phi = propagation.imu_step(R, p, v, bg, ba, w, a, dt,
                                            propagation.GRAVITY)
        phi_acc = phi @ phi_acc
        rows.append(pick @ phi_acc)
    O = np.vstack(rows)
    sv = np.linalg.svd(O, compute_uv=False)
    tol = max(O.shape) * np.finfo(float).eps * sv[0]
    return int((sv > tol).sum()), sv


@dataclass
class ObservabilityReport:
    mode: str
    max_residual: float | None
    rank: int | None
    nullspace: np.ndarray | None
    singular_values: np.ndarray | None


def observability_nullspace(state, mode="local", steps=20, dt=0.05, seed=0):
    """Diagnose the unobservable directions around a state snapshot.

    Local mode evaluates max |O N| for the analytic null basis using
    randomized future linearization points (the identity holds for any).
    Global mode integrates generic excitation from the snapshot and
    reports the observability rank; 15 means fully observable.
    """
    rng = np.random.default_rng(seed)
    R0 = state.imu.R.copy()
    p0 = state.imu.p.copy()
    v0 = state.imu.v.copy()
    if mode == "local":
        ft = state.frame_transform
        R_we = ft.R.copy() if ft is not None else np.eye(3)
        items = []
        for k in range(steps):
            Rk = so3.exp_so3(rng.normal(size=3)) @ R0
            items.append((Rk, rng.normal(size=3) * 5.0,
                          rng.normal(size=3), dt * (k + 1)))
        O, N, res = local_observability(R0, p0, v0, R_we, items)
        return ObservabilityReport("local", res, None, N, None)
    if mode == "global":
        # body-frame sinusoids: any rich excitation works for the rank test
        ts = dt * np.arange(steps)
        omegas = 0.8 * np.stack([np.sin(2.1 * ts), np.cos(1.3 * ts),
                                 np.sin(0.7 * ts + 0.5)], axis=1)
        omegas = omegas + state.imu.bg
        accels = np.stack([2.0 * np.sin(1.7 * ts), 1.5 * np.cos(2.3 * ts),
                           propagation.GRAVITY + 0.5 * np.sin(3.1 * ts)],
                          axis=1)
        accels = accels + state.imu.ba
        rank, sv = global_observability(R0, p0, v0, state.imu.bg,
                                        state.imu.ba, omegas, accels, dt)
        return ObservabilityReport("global", float(sv[-1]), rank, None, sv)
    raise ValueError("mode must be 'local' or 'global'")
