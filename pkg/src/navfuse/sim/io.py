"""CSV readers and writers for all stream formats.

One file per stream. Formats (all with a header row):

- waypoints: ``t,x,y,z,yaw`` or ``t,x,y,z,yaw,pitch,roll``
- IMU: ``t,wx,wy,wz,ax,ay,az``
- wheel encoders: ``t,omega_left,omega_right``
- GNSS fixes: ``t,x,y,z,std_x,std_y,std_z``
- camera features: ``t,cam_id,feat_id,u,v``
- LiDAR points: ``t,x,y,z`` where rows sharing a stamp form one scan
- estimator states: ``t,r00,...,r22,px,...,baz,frame_tag`` with the
  world-to-IMU rotation flattened row-major and ``frame_tag`` either
  ``local`` or ``global``
"""

from __future__ import annotations

import csv

import numpy as np

STATE_HEADER = ("t,r00,r01,r02,r10,r11,r12,r20,r21,r22,"
                "px,py,pz,vx,vy,vz,bgx,bgy,bgz,bax,bay,baz,frame_tag")


def _write_table(path, header, arr):
    np.savetxt(path, np.atleast_2d(arr), fmt="%.12g", delimiter=",",
               header=header, comments="")


def _read_table(path, cols):
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if arr.size == 0:
        return np.zeros((0, cols))
    if arr.shape[1] != cols:
        raise ValueError(f"{path}: expected {cols} columns, got "
                         f"{arr.shape[1]}")
    return arr


def write_waypoints(path, wp):
    wp = np.asarray(wp, dtype=float)
    header = "t,x,y,z,yaw" if wp.shape[1] == 5 else "t,x,y,z,yaw,pitch,roll"
    _write_table(path, header, wp)


def read_waypoints(path):
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if arr.shape[1] not in (5, 7):
        raise ValueError(f"{path}: waypoint files have 5 or 7 columns")
    return arr


def write_imu(path, t, w, a):
    _write_table(path, "t,wx,wy,wz,ax,ay,az",
                 np.column_stack([t, w, a]))


def read_imu(path):
    arr = _read_table(path, 7)
    return arr[:, 0], arr[:, 1:4], arr[:, 4:7]


def write_wheel(path, t, wl, wr):
    _write_table(path, "t,omega_left,omega_right",
                 np.column_stack([t, wl, wr]))


def read_wheel(path):
    arr = _read_table(path, 3)
    return arr[:, 0], arr[:, 1], arr[:, 2]


def write_gnss(path, t, z, std):
    _write_table(path, "t,x,y,z,std_x,std_y,std_z",
                 np.column_stack([t, z, std]))


def read_gnss(path):
    arr = _read_table(path, 7)
    return arr[:, 0], arr[:, 1:4], arr[:, 4:7]


def write_camera(path, cams):
    """Write feature observations of all cameras into one file.

    ``cams`` is a list of dicts with keys ``t``, ``feat_id``, ``uv``
    (the per-camera layout produced by the simulator); rows are sorted
    by stamp, then camera id.
    """
    rows = []
    for cam_id, c in enumerate(cams):
        if c["t"].size:
            rows.append(np.column_stack([
                c["t"], np.full(c["t"].size, cam_id), c["feat_id"],
                c["uv"]]))
    if rows:
        arr = np.vstack(rows)
        arr = arr[np.lexsort((arr[:, 1], arr[:, 0]))]
    else:
        arr = np.zeros((0, 5))
    _write_table(path, "t,cam_id,feat_id,u,v", arr)


def read_camera(path, n_cams=None):
    arr = _read_table(path, 5)
    ids = arr[:, 1].astype(int)
    n = (ids.max() + 1) if ids.size else 0
    if n_cams is not None:
        n = max(n, n_cams)
    out = []
    for cam_id in range(n):
        m = ids == cam_id
        out.append({"t": arr[m, 0], "feat_id": arr[m, 2].astype(int),
                    "uv": arr[m, 3:5]})
    return out


def write_lidar(path, scans):
    """Write one LiDAR's scans; rows with equal stamps form one scan."""
    rows = [np.column_stack([np.full(pts.shape[0], tk), pts])
            for tk, pts in scans]
    arr = np.vstack(rows) if rows else np.zeros((0, 4))
    _write_table(path, "t,x,y,z", arr)


def read_lidar(path):
    arr = _read_table(path, 4)
    scans = []
    if arr.shape[0] == 0:
        return scans
    # stamps are written in order, so split on change points
    change = np.flatnonzero(np.diff(arr[:, 0]) != 0) + 1
    for chunk in np.split(arr, change):
        scans.append((float(chunk[0, 0]), chunk[:, 1:4].copy()))
    return scans


def write_states(path, rows):
    """Write estimator output states.

    ``rows`` is an iterable of ``(t, R, p, v, bg, ba, frame_tag)``.
    """
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(STATE_HEADER.split(","))
        for t, r, p, v, bg, ba, tag in rows:
            vals = np.concatenate([[t], np.asarray(r).ravel(), p, v, bg,
                                   ba])
            wr.writerow([f"{x:.12g}" for x in vals] + [tag])


def read_states(path):
    ts, rs, ps, vs, bgs, bas, tags = [], [], [], [], [], [], []
    with open(path, newline="") as f:
        rd = csv.reader(f)
        header = next(rd)
        if header != STATE_HEADER.split(","):
            raise ValueError(f"{path}: unexpected state header")
        for row in rd:
            vals = np.array([float(x) for x in row[:22]])
            ts.append(vals[0])
            rs.append(vals[1:10].reshape(3, 3))
            ps.append(vals[10:13])
            vs.append(vals[13:16])
            bgs.append(vals[16:19])
            bas.append(vals[19:22])
            tags.append(row[22])
    return {"t": np.array(ts), "R": np.array(rs), "p": np.array(ps),
            "v": np.array(vs), "bg": np.array(bgs),
            "ba": np.array(bas), "tag": tags}
