"""Monte-Carlo studies: variant sweeps, per-run scoring, report files.

Each named experiment expands into a list of config variants; every
variant runs over seeds 1..n with common random numbers (the simulator
draws per-sensor streams keyed only by seed, so two variants with the
same seed see identical measurements wherever their sensor sets agree).

Outputs per experiment directory:

* ``<variant>-seed<NNN>-states.csv``  one estimator trajectory per run,
* ``summary.csv``   one row per run, deterministic for a given
  seed/config (no wall-clock columns, so reruns are byte-identical),
* ``timings.csv``   wall time per sensor class per run,
* ``summary.txt``   mean +/- std per variant, human-readable.
"""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..config import default_config
from ..errors import ConfigError, DivergenceError
from ..fusion import run_filter
from ..sim import perturb_calibration, simulate
from ..sim.io import write_states
from .metrics import compute_ate, compute_nees, compute_rmse, match_truth

log = logging.getLogger(__name__)

METRIC_COLS = ("diverged", "pos_rmse", "ori_rmse", "nees_ori", "nees_pos",
               "nees_vel", "end_err", "ate_yaw", "matched", "singular",
               "clones", "mean_rate_hz", "camera_used", "wheel_updates",
               "gnss_fixes", "lidar_scans")
AGG_COLS = ("pos_rmse", "ori_rmse", "nees_ori", "nees_pos", "end_err",
            "ate_yaw", "mean_rate_hz")
TIMING_COLS = ("total", "propagation", "camera", "wheel", "gnss", "lidar",
               "marginalization")

DROP_WINDOWS = {"camera": (20.0, 25.0), "wheel": (27.0, 32.0),
                "lidar": (34.0, 39.0), "gnss": (41.0, 46.0)}
PERTURB_LEVELS = (0.005, 0.02, 0.06)
CLONING_COEFFS = (0.01, 0.1, 1.0, 10.0, 100.0)


def data_path(name) -> str:
    """Path of a data file shipped inside the package."""
    return str(resources.files("navfuse").joinpath("data", name))


@dataclass
class Variant:
    """One arm of an experiment: a config plus report columns."""

    name: str
    cfg: object
    fields: dict = field(default_factory=dict)
    perturb_level: float = 0.0


# ------------------------------------------------------------- scoring

def run_single(cfg, seed=None, deltas=None):
    """Simulate one seed, run the filter, and score it against truth.

    Divergence is not fatal: the partial trajectory is scored and the
    row carries ``diverged=1``. Returns ``(RunResult, row)``.
    """
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg.seed = int(seed)
    data = simulate(cfg)
    try:
        res = run_filter(cfg, data, deltas=deltas)
    except DivergenceError as err:
        res = err.result
    row = score_run(res, data.truth)
    row["seed"] = int(cfg.seed)
    return res, row


def score_run(res, truth) -> dict:
    """Deterministic per-run metrics (no wall-clock values)."""
    row = {"diverged": int(res.diverged)}
    row.update(compute_rmse(res, truth))
    nees = compute_nees(res, truth)
    for k in ("nees_ori", "nees_pos", "nees_vel", "singular"):
        row[k] = nees[k]
    ei, ti = match_truth(res.t, truth["t"])
    if ei.size:
        row["end_err"] = float(np.linalg.norm(
            res.p[ei[-1]] - truth["p"][ti[-1]]))
    else:
        row["end_err"] = float("nan")
    try:
        row["ate_yaw"] = compute_ate(res.p[ei], truth["p"][ti],
                                     alignment="yaw")
    except ValueError:
        row["ate_yaw"] = float("nan")
    c = res.counters
    row["clones"] = int(c.get("clones", 0))
    span = float(res.t[-1] - res.t[0]) if res.t.size > 1 else 0.0
    row["mean_rate_hz"] = ((row["clones"] - 1) / span if span > 0
                           else float("nan"))
    for k in ("camera_used", "wheel_updates", "gnss_fixes", "lidar_scans"):
        row[k] = int(c.get(k, 0))
    return row


def timing_row(res) -> dict:
    t = dict(res.timings)
    row = {k: float(t.get(k, 0.0)) for k in TIMING_COLS[1:]}
    row["total"] = float(sum(t.values()))
    return row


# ----------------------------------------------------- experiment arms

def excited_vio_config(duration=60.0):
    """IMU + stereo camera on the fully excited 3D path."""
    cfg = default_config(sensors=("camera", "camera"),
                         waypoints=data_path("waypoints_excited.csv"))
    cfg.trajectory.yaw_mode = "spline"
    cfg.duration = duration
    cfg.world.n_landmarks = 400
    for c in cfg.cameras:
        c.max_features = 16
    cfg.estimator.slope_table = data_path("slope_table.csv")
    return cfg.validate()


def planar_rig_config(duration=60.0):
    """Full sensor rig on the planar (wheeled) path."""
    cfg = default_config(waypoints=data_path("waypoints_planar.csv"))
    cfg.trajectory.yaw_mode = "heading"
    cfg.duration = duration
    cfg.world.n_landmarks = 400
    for c in cfg.cameras:
        c.max_features = 14
    for l in cfg.lidars:
        l.n_points = 100
    cfg.estimator.slope_table = data_path("slope_table.csv")
    return cfg.validate()


def calib_config(duration=45.0):
    """Stereo camera plus one LiDAR on the excited path."""
    cfg = default_config(sensors=("camera", "camera", "lidar"),
                         waypoints=data_path("waypoints_excited.csv"))
    cfg.trajectory.yaw_mode = "spline"
    cfg.duration = duration
    cfg.world.n_landmarks = 400
    for c in cfg.cameras:
        c.max_features = 16
    cfg.estimator.slope_table = data_path("slope_table.csv")
    return cfg.validate()


def _with_table(cfg):
    if cfg.estimator.slope_table is None:
        cfg.estimator.slope_table = data_path("slope_table.csv")
    return cfg


def _interp_model_variants(cfg=None):
    # Linear interpolation between clones: the regime where the error
    # model matters. Higher orders track the spline truth so closely
    # that every rate stays consistent with or without it.
    base = _with_table(copy.deepcopy(cfg) if cfg else excited_vio_config())
    base.estimator.order = 1
    rates = base.estimator.candidate_rates
    out = []
    for model in (1, 0):
        for hz in rates:
            c = copy.deepcopy(base)
            c.estimator.dynamic_cloning = False
            c.estimator.clone_rate = float(hz)
            c.estimator.use_interp_noise = bool(model)
            if not model:
                c.estimator.slope_table = None
            tag = "with" if model else "without"
            out.append(Variant(f"{tag}-model-{hz:g}hz", c,
                               {"interp_model": model, "rate_hz": hz}))
    return out


# Base error budgets for the cloning coefficient sweep, placed so the
# {0.01..100} multipliers straddle this trajectory's motion range: the
# smallest coefficient pins the max candidate rate, the largest pins
# the min, and the middle ones move the time-average in between.
CLONING_GAMMA_O = 5.0e-4
CLONING_GAMMA_P = 3.0e-3


def _dynamic_cloning_variants(cfg=None):
    base = _with_table(copy.deepcopy(cfg) if cfg else excited_vio_config())
    base.estimator.order = 1
    if cfg is None:
        base.estimator.gamma_o = CLONING_GAMMA_O
        base.estimator.gamma_p = CLONING_GAMMA_P
    out = []
    for k in CLONING_COEFFS:
        c = copy.deepcopy(base)
        c.estimator.dynamic_cloning = True
        c.estimator.use_interp_noise = True
        c.estimator.gamma_o = base.estimator.gamma_o * k
        c.estimator.gamma_p = base.estimator.gamma_p * k
        out.append(Variant(f"coeff-{k:g}", c, {"coeff": k}))
    return out


_COMBOS = (("all", ("camera", "wheel", "gnss", "lidar")),
           ("imu-camera", ("camera",)),
           ("imu-gnss", ("gnss",)),
           ("imu-wheel", ("wheel",)),
           ("imu-lidar", ("lidar",)))


def _apply_combo(cfg, keep):
    for c in cfg.cameras:
        c.enabled = "camera" in keep
    if cfg.wheel is not None:
        cfg.wheel.enabled = "wheel" in keep
    for g in cfg.gnss:
        g.enabled = "gnss" in keep
    for l in cfg.lidars:
        l.enabled = "lidar" in keep


def _sensor_combo_variants(cfg=None):
    base = copy.deepcopy(cfg) if cfg else planar_rig_config()
    out = []
    for name, keep in _COMBOS:
        c = copy.deepcopy(base)
        _apply_combo(c, keep)
        out.append(Variant(name, c, {"combo": name,
                                     "n_aiding": len(keep)}))
    return out


def _apply_drops(cfg):
    for c in cfg.cameras:
        c.drop = list(DROP_WINDOWS["camera"])
    if cfg.wheel is not None:
        cfg.wheel.drop = list(DROP_WINDOWS["wheel"])
    for g in cfg.gnss:
        g.drop = list(DROP_WINDOWS["gnss"])
    for l in cfg.lidars:
        l.drop = list(DROP_WINDOWS["lidar"])


def _sensor_drop_variants(cfg=None):
    base = copy.deepcopy(cfg) if cfg else planar_rig_config()
    combos = (("all", ("camera", "wheel", "gnss", "lidar")),
              ("imu-camera", ("camera",)),
              ("imu-wheel", ("wheel",)),
              ("imu-lidar", ("lidar",)))
    out = []
    for name, keep in combos:
        c = copy.deepcopy(base)
        _apply_combo(c, keep)
        _apply_drops(c)
        out.append(Variant(name, c, {"combo": name,
                                     "n_aiding": len(keep)}))
    return out


def _enable_calibration(cfg):
    for c in cfg.cameras:
        c.estimate_extrinsic = True
    if cfg.wheel is not None:
        cfg.wheel.estimate_extrinsic = True
    for g in cfg.gnss:
        g.estimate_lever_arm = True
    for l in cfg.lidars:
        l.estimate_extrinsic = True


def _calib_perturb_variants(cfg=None):
    base = copy.deepcopy(cfg) if cfg else calib_config()
    out = [Variant("baseline", copy.deepcopy(base),
                   {"level": 0.0, "calib": 0})]
    for calib in (1, 0):
        for lv in PERTURB_LEVELS:
            c = copy.deepcopy(base)
            if calib:
                _enable_calibration(c)
            tag = "calib-on" if calib else "calib-off"
            out.append(Variant(f"{tag}-{lv:g}", c,
                               {"level": lv, "calib": calib},
                               perturb_level=lv))
    return out


EXPERIMENTS = {
    "interp-model": _interp_model_variants,
    "dynamic-cloning": _dynamic_cloning_variants,
    "sensor-combo": _sensor_combo_variants,
    "sensor-drop": _sensor_drop_variants,
    "calib-perturb": _calib_perturb_variants,
}


# ------------------------------------------------------------- reports

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".12g")
    return str(x)


def _write_csv(path, cols, rows):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(cols)
        for row in rows:
            wr.writerow([_fmt(row.get(c, "")) for c in cols])


def aggregate(rows) -> list:
    """Mean/std per variant over non-diverged runs.

    Statistics are taken over the values as printed in summary.csv
    (round-tripped through the same format), so anyone re-deriving the
    aggregates from that file reproduces them exactly.
    """
    order, fields = [], {}
    for r in rows:
        if r["variant"] not in fields:
            order.append(r["variant"])
            fields[r["variant"]] = {
                k: v for k, v in r.items()
                if k not in METRIC_COLS and k not in ("seed", "variant")}
    out = []
    for name in order:
        sub = [r for r in rows if r["variant"] == name]
        ok = [r for r in sub if not r["diverged"]]
        ag = {"variant": name, **fields[name],
              "runs": len(sub), "diverged": len(sub) - len(ok)}
        for col in AGG_COLS:
            vals = np.array([float(_fmt(r[col])) for r in ok
                             if np.isfinite(r[col])])
            ag[f"{col}_mean"] = float(vals.mean()) if vals.size else \
                float("nan")
            ag[f"{col}_std"] = float(vals.std()) if vals.size else \
                float("nan")
        out.append(ag)
    return out


def _text_summary(experiment, aggs, wall_means) -> str:
    lines = [f"experiment: {experiment or 'single-config'}", ""]
    head = (f"{'variant':24s} {'runs':>4s} {'div':>3s} "
            f"{'pos RMSE [m]':>18s} {'ori RMSE [deg]':>18s} "
            f"{'NEES ori':>9s} {'NEES pos':>9s} {'end err [m]':>12s} "
            f"{'wall [s]':>9s}")
    lines.append(head)
    lines.append("-" * len(head))
    for ag in aggs:
        pos = f"{ag['pos_rmse_mean']:.4f} +- {ag['pos_rmse_std']:.4f}"
        ori = (f"{np.degrees(ag['ori_rmse_mean']):.3f} +- "
               f"{np.degrees(ag['ori_rmse_std']):.3f}")
        lines.append(
            f"{ag['variant']:24s} {ag['runs']:4d} {ag['diverged']:3d} "
            f"{pos:>18s} {ori:>18s} {ag['nees_ori_mean']:9.2f} "
            f"{ag['nees_pos_mean']:9.2f} {ag['end_err_mean']:12.4f} "
            f"{wall_means.get(ag['variant'], float('nan')):9.2f}")
    lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------- main

def run_monte_carlo(cfg=None, n_runs=10, experiment=None, out_dir=None,
                    seeds=None) -> dict:
    """Run an experiment (or a plain config) over seeds 1..n.

    Returns a report dict with per-run ``rows``, per-run ``timings``,
    per-variant ``aggregates``, and an ``all_diverged`` flag.
    """
    if experiment is not None:
        try:
            build = EXPERIMENTS[experiment]
        except KeyError:
            raise ConfigError(
                f"unknown experiment {experiment!r}; pick one of "
                f"{sorted(EXPERIMENTS)}") from None
        variants = build(cfg)
    elif cfg is not None:
        variants = [Variant("run", cfg)]
    else:
        raise ConfigError("either a config or an experiment is required")
    if seeds is None:
        seeds = list(range(1, int(n_runs) + 1))

    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)

    rows, trows = [], []
    for var in variants:
        for seed in seeds:
            deltas = None
            if var.perturb_level:
                deltas = perturb_calibration(var.cfg, var.perturb_level,
                                             seed)
            res, row = run_single(var.cfg, seed=seed, deltas=deltas)
            row = {"variant": var.name, **var.fields, **row}
            rows.append(row)
            trow = {"variant": var.name, "seed": seed, **timing_row(res)}
            trows.append(trow)
            log.info("%-24s seed %3d%s  pos rmse %.4f m  wall %.1f s",
                     var.name, seed,
                     " DIVERGED" if row["diverged"] else "",
                     row["pos_rmse"], trow["total"])
            if out is not None:
                write_states(
                    out / f"{var.name}-seed{seed:03d}-states.csv",
                    zip(res.t, res.R, res.p, res.v, res.bg, res.ba,
                        res.tags))

    aggs = aggregate(rows)
    wall_means = {}
    for var in variants:
        ts = [t["total"] for t in trows if t["variant"] == var.name]
        wall_means[var.name] = float(np.mean(ts)) if ts else float("nan")

    if out is not None:
        extra = sorted({k for r in rows
                        for k in r if k not in METRIC_COLS
                        and k not in ("seed", "variant")})
        _write_csv(out / "summary.csv",
                   ["variant", *extra, "seed", *METRIC_COLS], rows)
        _write_csv(out / "timings.csv",
                   ["variant", "seed", *TIMING_COLS], trows)
        agg_cols = ["variant", *extra, "runs", "diverged"]
        for col in AGG_COLS:
            agg_cols += [f"{col}_mean", f"{col}_std"]
        _write_csv(out / "aggregates.csv", agg_cols, aggs)
        (out / "summary.txt").write_text(
            _text_summary(experiment, aggs, wall_means))

    return {"experiment": experiment, "variants": [v.name for v in
                                                   variants],
            "rows": rows, "timings": trows, "aggregates": aggs,
            "wall_means": wall_means,
            "all_diverged": all(r["diverged"] for r in rows)}
