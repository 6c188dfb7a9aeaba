"""Command-line entry point.

Verbs:

* ``simulate``  synthesize sensor streams from a config into CSV files
* ``run``       one simulate + filter pass; states CSV and a metric line
* ``mc``        Monte-Carlo sweep over seeds, plain or a named study
* ``slopes``    fit the interpolation error-slope table and write it
* ``obscheck``  numeric observability diagnostics (nullspace and rank)

Exit codes: 0 success, 1 configuration error, 2 every run diverged.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .errors import ConfigError

log = logging.getLogger("navfuse")


def _load_config(args, required=True):
    if args.config is None:
        if required:
            raise ConfigError("--config is required for this command")
        return None
    cfg = config_mod.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _cmd_simulate(args) -> int:
    from .sim import io, simulate

    cfg = _load_config(args)
    data = simulate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_imu(out / "imu.csv", data.imu["t"], data.imu["w"],
                 data.imu["a"])
    if data.cameras:
        io.write_camera(out / "camera.csv", data.cameras)
    if data.wheel is not None:
        io.write_wheel(out / "wheel.csv", data.wheel["t"],
                       data.wheel["wl"], data.wheel["wr"])
    for i, g in enumerate(data.gnss):
        io.write_gnss(out / f"gnss{i}.csv", g["t"], g["z"], g["std"])
    for i, scans in enumerate(data.lidars):
        io.write_lidar(out / f"lidar{i}.csv", scans)
    tr = data.truth
    io.write_states(out / "truth.csv",
                    zip(tr["t"], tr["R"], tr["p"], tr["v"], tr["bg"],
                        tr["ba"], ["world"] * tr["t"].size))
    config_mod.save(cfg, out / "config.yaml")
    log.info("wrote simulation streams for seed %d to %s", cfg.seed, out)
    return 0


def _cmd_run(args) -> int:
    from .eval.runner import run_single, timing_row
    from .sim.io import write_states

    cfg = _load_config(args)
    res, row = run_single(cfg)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_states(out / "states.csv",
                     zip(res.t, res.R, res.p, res.v, res.bg, res.ba,
                         res.tags))
    wall = timing_row(res)["total"]
    print(f"seed {row['seed']}: pos rmse {row['pos_rmse']:.4f} m, "
          f"ori rmse {np.degrees(row['ori_rmse']):.4f} deg, "
          f"nees ori/pos {row['nees_ori']:.2f}/{row['nees_pos']:.2f}, "
          f"clones {row['clones']}, wall {wall:.2f} s"
          + (", DIVERGED" if row["diverged"] else ""))
    return 2 if row["diverged"] else 0


def _cmd_mc(args) -> int:
    from .eval.runner import EXPERIMENTS, run_monte_carlo

    cfg = _load_config(args, required=args.experiment is None)
    if args.experiment is not None and args.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {args.experiment!r}; "
                          f"pick one of {sorted(EXPERIMENTS)}")
    report = run_monte_carlo(cfg, n_runs=args.runs,
                             experiment=args.experiment,
                             out_dir=args.out)
    summary = Path(args.out) / "summary.txt"
    print(summary.read_text(), end="")
    return 2 if report["all_diverged"] else 0


def _cmd_slopes(args) -> int:
    from .eval.slopes import (DEFAULT_ORDERS, DEFAULT_RATES,
                              build_slope_table, slope_config,
                              table_for_config)
    from .interp import config_hash

    cfg = _load_config(args, required=False)
    if cfg is not None:
        table = table_for_config(cfg)
    else:
        from .eval.runner import data_path

        wp = data_path("waypoints_excited.csv")
        meta = config_hash({"waypoints": wp, "yaw_mode": "spline",
                            "orders": list(DEFAULT_ORDERS),
                            "rates": list(DEFAULT_RATES)})
        table = build_slope_table(wp, yaw_mode="spline", meta=meta)
    table.save(args.out)
    log.info("wrote %d-cell slope table to %s", table.orders.size,
             args.out)
    return 0


def _cmd_obscheck(args) -> int:
    from .observability import observability_nullspace
    from .state import NavState
    from . import so3

    rng = np.random.default_rng(args.seed or 0)
    worst = 0.0
    ranks = []
    for k in range(args.runs):
        st = NavState(t=0.0)
        st.imu.R = so3.exp_so3(rng.normal(size=3))
        st.imu.p = rng.normal(size=3) * 5.0
        st.imu.v = rng.normal(size=3)
        st.imu.bg = rng.normal(size=3) * 0.01
        st.imu.ba = rng.normal(size=3) * 0.05
        rep = observability_nullspace(st, mode="local", seed=k)
        worst = max(worst, rep.max_residual)
        rep = observability_nullspace(st, mode="global", steps=40,
                                      seed=k)
        ranks.append(rep.rank)
    print(f"local nullspace: max |O N| = {worst:.3e} over "
          f"{args.runs} random states (4 unobservable directions)")
    print(f"global rank: min {min(ranks)} / max {max(ranks)} of 15")
    ok = worst < 1e-9 and min(ranks) == 15
    print("OK" if ok else "FAILED")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="navfuse",
        description="Multisensor inertial navigation: simulate, fuse, "
                    "and evaluate.")
    ap.add_argument("-v", "--verbose", action="store_true",
                    help="log per-run progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write synthetic sensor CSVs")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("run", help="single simulate + estimate pass")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("mc", help="Monte-Carlo sweep")
    p.add_argument("--config", default=None,
                   help="base config (optional with --experiment)")
    p.add_argument("--experiment", default=None,
                   help="interp-model | dynamic-cloning | sensor-combo "
                        "| sensor-drop | calib-perturb")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_mc)

    p = sub.add_parser("slopes", help="fit the error-slope table")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default="slope_table.csv")
    p.set_defaults(func=_cmd_slopes)

    p = sub.add_parser("obscheck", help="observability diagnostics")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_obscheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(message)s")
    if args.verbose:
        logging.getLogger("navfuse").setLevel(logging.INFO)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
