"""Deterministic multisensor simulator.

Builds a cubic-spline trajectory through waypoints, wraps it in a box
room with wall landmarks, and samples IMU, camera, wheel-encoder, GNSS,
and LiDAR streams with per-sensor random number streams so runs are
bit-reproducible for a given seed.
"""

from .trajectory import Trajectory
from .world import BoxWorld, build_world, ray_exit
from .sensors import SimData, simulate, perturb_calibration
from . import io

__all__ = [
    "Trajectory",
    "BoxWorld",
    "build_world",
    "ray_exit",
    "SimData",
    "simulate",
    "perturb_calibration",
    "io",
]
