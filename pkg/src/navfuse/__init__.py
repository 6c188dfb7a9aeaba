"""navfuse: multisensor inertial navigation with on-manifold interpolation.

An error-state Kalman filter that propagates an IMU state, keeps a sliding
window of stochastically cloned poses, and fuses camera tracks, wheel
odometry, LiDAR scans, and GNSS fixes by interpolating the pose window to
each measurement time. Interpolation error is modeled as extra measurement
noise, which lets the clone rate adapt to the motion instead of the sensor
rates.
"""

from . import so3
from .accel import NUMBA_ENABLED
from .errors import (
    ConfigError,
    DivergenceError,
    InitializationError,
    PropagationGapError,
)

__version__ = "0.1.0"

__all__ = [
    "so3",
    "NUMBA_ENABLED",
    "ConfigError",
    "DivergenceError",
    "InitializationError",
    "PropagationGapError",
    "__version__",
]
