"""Configuration schema, defaults, and YAML round-trip.

A single :class:`Config` drives both the simulator and the estimator so a
run is reproducible from one file. Sensor blocks carry the true rig used
to synthesize data together with the estimator-side flags (which
calibration states to estimate, whether the sensor is fused at all).

Files are plain YAML with the same nesting as the dataclasses. Unknown
keys are rejected rather than ignored so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError

GRAVITY = 9.81


def _vec(x, n):
    a = np.asarray(x, dtype=float).reshape(-1)
    if a.size != n:
        raise ConfigError(f"expected {n} values, got {a.size}")
    return [float(v) for v in a]


@dataclass
class TrajectoryConfig:
    """Waypoint spline settings.

    ``waypoints`` may be a CSV path or an inline list of rows
    ``[t, x, y, z, yaw]`` or ``[t, x, y, z, yaw, pitch, roll]``. With
    ``yaw_mode: heading`` the yaw column is ignored and heading is taken
    from the horizontal velocity, which keeps wheel-odometry runs exactly
    nonholonomic.
    """

    waypoints: object = None
    yaw_mode: str = "heading"

    def validate(self):
        if self.yaw_mode not in ("heading", "spline"):
            raise ConfigError(f"trajectory.yaw_mode: {self.yaw_mode!r}")
        if self.waypoints is None:
            raise ConfigError("trajectory.waypoints is required")


@dataclass
class WorldConfig:
    margin: float = 3.0
    n_landmarks: int = 600

    def validate(self):
        if self.margin <= 0:
            raise ConfigError("world.margin must be positive")
        if self.n_landmarks < 0:
            raise ConfigError("world.n_landmarks must be >= 0")


@dataclass
class ImuConfig:
    rate: float = 200.0
    gyro_noise: float = 2.0e-3
    gyro_walk: float = 2.0e-4
    accel_noise: float = 2.0e-2
    accel_walk: float = 3.0e-2

    def validate(self):
        if self.rate <= 0:
            raise ConfigError("imu.rate must be positive")
        for k in ("gyro_noise", "gyro_walk", "accel_noise", "accel_walk"):
            if getattr(self, k) < 0:
                raise ConfigError(f"imu.{k} must be >= 0")


@dataclass
class CameraConfig:
    enabled: bool = True
    rate: float = 30.0
    sigma_px: float = 1.0
    max_features: int = 40
    intrinsics: list = field(default_factory=lambda: [400.0, 400.0,
                                                      320.0, 240.0])
    resolution: list = field(default_factory=lambda: [640, 480])
    rot_imu_to_cam: list = field(default_factory=lambda: [1.57, 0.0, 0.0])
    p_imu_in_cam: list = field(default_factory=lambda: [-0.01, 0.01, 0.01])
    time_offset: float = 0.0
    estimate_extrinsic: bool = False
    estimate_intrinsics: bool = False
    estimate_time_offset: bool = False
    drop: object = None

    def validate(self, name="camera"):
        if self.rate <= 0:
            raise ConfigError(f"{name}.rate must be positive")
        if self.sigma_px <= 0:
            raise ConfigError(f"{name}.sigma_px must be positive")
        if self.max_features < 1:
            raise ConfigError(f"{name}.max_features must be >= 1")
        self.intrinsics = _vec(self.intrinsics, 4)
        self.resolution = [int(v) for v in _vec(self.resolution, 2)]
        self.rot_imu_to_cam = _vec(self.rot_imu_to_cam, 3)
        self.p_imu_in_cam = _vec(self.p_imu_in_cam, 3)
        _check_drop(self.drop, name)


@dataclass
class WheelConfig:
    enabled: bool = True
    rate: float = 100.0
    sigma: float = 1.0e-2
    intrinsics: list = field(default_factory=lambda: [0.15, 0.15, 0.5])
    rot_imu_to_odo: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    p_imu_in_odo: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    time_offset: float = 0.0
    estimate_extrinsic: bool = False
    estimate_intrinsics: bool = False
    estimate_time_offset: bool = False
    drop: object = None

    def validate(self):
        if self.rate <= 0:
            raise ConfigError("wheel.rate must be positive")
        if self.sigma < 0:
            raise ConfigError("wheel.sigma must be >= 0")
        self.intrinsics = _vec(self.intrinsics, 3)
        if min(self.intrinsics) <= 0:
            raise ConfigError("wheel.intrinsics must be positive")
        self.rot_imu_to_odo = _vec(self.rot_imu_to_odo, 3)
        self.p_imu_in_odo = _vec(self.p_imu_in_odo, 3)
        _check_drop(self.drop, "wheel")


@dataclass
class GnssConfig:
    enabled: bool = True
    rate: float = 1.0
    std: float = 0.1
    p_gnss_in_imu: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    time_offset: float = 0.0
    estimate_lever_arm: bool = False
    estimate_time_offset: bool = False
    drop: object = None

    def validate(self, name="gnss"):
        if self.rate <= 0:
            raise ConfigError(f"{name}.rate must be positive")
        if self.std <= 0:
            raise ConfigError(f"{name}.std must be positive")
        self.p_gnss_in_imu = _vec(self.p_gnss_in_imu, 3)
        _check_drop(self.drop, name)


@dataclass
class LidarConfig:
    enabled: bool = True
    rate: float = 10.0
    sigma: float = 1.0e-2
    n_points: int = 120
    rot_imu_to_lidar: list = field(default_factory=lambda: [0.26, 0.0, 0.0])
    p_imu_in_lidar: list = field(default_factory=lambda: [0.3, 0.3, 0.5])
    time_offset: float = 0.0
    estimate_extrinsic: bool = False
    estimate_time_offset: bool = False
    drop: object = None

    def validate(self, name="lidar"):
        if self.rate <= 0:
            raise ConfigError(f"{name}.rate must be positive")
        if self.sigma < 0:
            raise ConfigError(f"{name}.sigma must be >= 0")
        if self.n_points < 1:
            raise ConfigError(f"{name}.n_points must be >= 1")
        self.rot_imu_to_lidar = _vec(self.rot_imu_to_lidar, 3)
        self.p_imu_in_lidar = _vec(self.p_imu_in_lidar, 3)
        _check_drop(self.drop, name)


@dataclass
class EstimatorConfig:
    """Filter-side knobs shared by all sensor configurations."""

    clone_rate: float = 20.0
    window: float = 1.0
    order: int = 3
    dynamic_cloning: bool = False
    candidate_rates: list = field(default_factory=lambda: [4.0, 6.0, 10.0,
                                                           20.0, 30.0])
    gamma_o: float = 7.0e-3
    gamma_p: float = 3.0e-3
    slope_table: object = None
    use_interp_noise: bool = True
    chi2_level: float = 0.95
    init: str = "truth"
    min_track: int = 3
    max_track_obs: int = 12
    p0_theta: float = 0.005
    p0_pos: float = 0.01
    p0_vel: float = 0.05
    p0_bg: float = 0.001
    p0_ba: float = 0.01

    def validate(self):
        if self.clone_rate <= 0:
            raise ConfigError("estimator.clone_rate must be positive")
        if self.window <= 0:
            raise ConfigError("estimator.window must be positive")
        if self.order < 1 or self.order % 2 == 0:
            raise ConfigError("estimator.order must be odd and >= 1")
        if self.init not in ("truth", "static", "dynamic"):
            raise ConfigError(f"estimator.init: {self.init!r}")
        if not (0.5 < self.chi2_level < 1.0):
            raise ConfigError("estimator.chi2_level must be in (0.5, 1)")
        self.candidate_rates = sorted(float(r) for r in self.candidate_rates)
        if self.dynamic_cloning and not self.candidate_rates:
            raise ConfigError("dynamic cloning needs candidate_rates")
        if self.min_track < 2:
            raise ConfigError("estimator.min_track must be >= 2")
        if self.max_track_obs < self.min_track:
            raise ConfigError("estimator.max_track_obs must cover "
                              "min_track")


@dataclass
class Config:
    seed: int = 1
    duration: float = 60.0
    gravity: float = GRAVITY
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    imu: ImuConfig = field(default_factory=ImuConfig)
    cameras: list = field(default_factory=list)
    wheel: WheelConfig | None = None
    gnss: list = field(default_factory=list)
    lidars: list = field(default_factory=list)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)

    def validate(self):
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.gravity <= 0:
            raise ConfigError("gravity must be positive")
        self.trajectory.validate()
        self.world.validate()
        self.imu.validate()
        for i, c in enumerate(self.cameras):
            c.validate(f"cameras[{i}]")
        if self.wheel is not None:
            self.wheel.validate()
        for i, g in enumerate(self.gnss):
            g.validate(f"gnss[{i}]")
        for i, l in enumerate(self.lidars):
            l.validate(f"lidars[{i}]")
        self.estimator.validate()
        return self


def _check_drop(drop, name):
    if drop is None:
        return
    try:
        t0, t1 = float(drop[0]), float(drop[1])
    except (TypeError, ValueError, IndexError):
        raise ConfigError(f"{name}.drop must be [t_start, t_end]") from None
    if t1 <= t0:
        raise ConfigError(f"{name}.drop window is empty")


_SECTIONS = {
    "trajectory": TrajectoryConfig,
    "world": WorldConfig,
    "imu": ImuConfig,
    "estimator": EstimatorConfig,
}
_LISTS = {"cameras": CameraConfig, "gnss": GnssConfig, "lidars": LidarConfig}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**data)


def from_dict(data) -> Config:
    """Build a validated :class:`Config` from a plain nested dict."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    data = dict(data)
    kwargs = {}
    for key, cls in _SECTIONS.items():
        if key in data:
            kwargs[key] = _build(cls, data.pop(key) or {}, key)
    for key, cls in _LISTS.items():
        items = data.pop(key, None) or []
        if not isinstance(items, list):
            raise ConfigError(f"{key}: expected a list")
        kwargs[key] = [_build(cls, it or {}, f"{key}[{i}]")
                       for i, it in enumerate(items)]
    if "wheel" in data:
        w = data.pop("wheel")
        kwargs["wheel"] = None if w is None else _build(WheelConfig, w,
                                                        "wheel")
    names = {f.name for f in dataclasses.fields(Config)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    kwargs.update(data)
    try:
        cfg = Config(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    return cfg.validate()


def to_dict(cfg: Config) -> dict:
    d = dataclasses.asdict(cfg)
    if d.get("wheel") is None:
        d.pop("wheel", None)
    wp = d["trajectory"]["waypoints"]
    if isinstance(wp, np.ndarray):
        d["trajectory"]["waypoints"] = [[float(x) for x in row]
                                        for row in np.atleast_2d(wp)]
    return d


def load(path) -> Config:
    """Load and validate a YAML config file."""
    with open(path) as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from None
    if data is None:
        raise ConfigError(f"{path}: empty config")
    return from_dict(data)


def save(cfg: Config, path):
    with open(path, "w") as f:
        yaml.safe_dump(to_dict(cfg), f, sort_keys=False)


def default_config(sensors=("camera", "camera", "gnss", "gnss", "wheel",
                            "lidar", "lidar"),
                   waypoints=None) -> Config:
    """Full-rig default matching the simulated platform.

    Sensor multiplicity follows the ``sensors`` tuple; the second camera,
    GNSS receiver, and LiDAR get their standard mounting offsets.
    """
    cfg = Config(trajectory=TrajectoryConfig(waypoints=waypoints))
    n_cam = sensors.count("camera")
    n_gnss = sensors.count("gnss")
    n_lidar = sensors.count("lidar")
    if n_cam >= 1:
        cfg.cameras.append(CameraConfig())
    if n_cam >= 2:
        cfg.cameras.append(CameraConfig(
            p_imu_in_cam=[0.01, 0.01, 0.01]))
    if "wheel" in sensors:
        cfg.wheel = WheelConfig()
    if n_gnss >= 1:
        cfg.gnss.append(GnssConfig())
    if n_gnss >= 2:
        cfg.gnss.append(GnssConfig(p_gnss_in_imu=[-1.0, -1.0, -1.0]))
    if n_lidar >= 1:
        cfg.lidars.append(LidarConfig())
    if n_lidar >= 2:
        cfg.lidars.append(LidarConfig(
            rot_imu_to_lidar=[0.0, 1.57, 0.0],
            p_imu_in_lidar=[-0.01, -0.01, -0.01]))
    return cfg
