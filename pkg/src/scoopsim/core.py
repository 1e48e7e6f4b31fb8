"""Shared geometric value types and run configuration.

Conventions used throughout the package:

* all quantities are SI (m, kg, s, rad, N); mass goals are entered in grams
  at user-facing interfaces and converted at the boundary,
* orientation is stored as roll/pitch/yaw.  Pitch is the planar angle in the
  vertical x-z plane, measured from +x toward +z, so a blade pitched
  negative has its tip below its center.  RPY is the native coordinate of
  the coaching vocabulary {x, y, z, roll, pitch, yaw}; gimbal lock cannot
  occur at the pitch ranges used here (|pitch| <= pi/2).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

TWO_PI = 2.0 * math.pi


class ConfigError(ValueError):
    """Raised when a configuration file or value violates its contract."""


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi].

    The result differs from ``theta`` by an integer multiple of 2*pi.
    """
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    wrapped = theta % TWO_PI  # [0, 2*pi)
    if wrapped > math.pi:
        wrapped -= TWO_PI
    return wrapped


def step_indicator(x: float) -> int:
    """Unit step: 1 if x >= 0, else 0."""
    return 1 if x >= 0 else 0


def _as_vec3(value: Iterable[float], name: str) -> np.ndarray:
    arr = np.asarray(tuple(value), dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} components must be finite, got {arr}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Pose:
    """6-DoF pose: position in meters plus roll/pitch/yaw in radians.

    Angles are normalized to (-pi, pi] on construction.
    """

    position: np.ndarray
    rpy: np.ndarray

    def __init__(self, position: Iterable[float] = (0.0, 0.0, 0.0),
                 rpy: Iterable[float] = (0.0, 0.0, 0.0)):
        object.__setattr__(self, "position", _as_vec3(position, "position"))
        normalized = _as_vec3([normalize_angle(a) for a in rpy], "rpy")
        object.__setattr__(self, "rpy", normalized)

    @property
    def roll(self) -> float:
        return float(self.rpy[0])

    @property
    def pitch(self) -> float:
        return float(self.rpy[1])

    @property
    def yaw(self) -> float:
        return float(self.rpy[2])

    def error_to(self, desired: "Pose") -> np.ndarray:
        """6-vector pose error (desired - self), angle terms normalized."""
        dp = desired.position - self.position
        da = np.array([normalize_angle(d - s)
                       for s, d in zip(self.rpy, desired.rpy)])
        return np.concatenate([dp, da])

    def offset(self, dposition: Iterable[float], drpy: Iterable[float]) -> "Pose":
        dpos = np.asarray(tuple(dposition), dtype=float)
        drot = np.asarray(tuple(drpy), dtype=float)
        return Pose(self.position + dpos, self.rpy + drot)

    def almost_equal(self, other: "Pose", pos_tol: float = 1e-9,
                     ang_tol: float = 1e-9) -> bool:
        err = self.error_to(other)
        return (np.max(np.abs(err[:3])) <= pos_tol
                and np.max(np.abs(err[3:])) <= ang_tol)

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(float(v) for v in self.position) + tuple(float(v) for v in self.rpy)


@dataclass(frozen=True)
class Twist:
    """Spatial velocity: linear m/s and angular (rpy rates) rad/s."""

    linear: np.ndarray
    angular: np.ndarray

    def __init__(self, linear: Iterable[float] = (0.0, 0.0, 0.0),
                 angular: Iterable[float] = (0.0, 0.0, 0.0)):
        object.__setattr__(self, "linear", _as_vec3(linear, "linear"))
        object.__setattr__(self, "angular", _as_vec3(angular, "angular"))


class Trajectory:
    """Time-stamped pose sequence with strictly increasing times."""

    def __init__(self, samples: Sequence[tuple[float, Pose]]):
        samples = list(samples)
        if len(samples) < 2:
            raise ValueError("trajectory needs at least 2 samples")
        times = [float(t) for t, _ in samples]
        for a, b in zip(times, times[1:]):
            if not b > a:
                raise ValueError("trajectory times must be strictly increasing")
        self._times = np.array(times)
        self._poses = [p for _, p in samples]

    @property
    def times(self) -> np.ndarray:
        return self._times

    @property
    def poses(self) -> list[Pose]:
        return list(self._poses)

    def __len__(self) -> int:
        return len(self._poses)

    def __getitem__(self, i: int) -> tuple[float, Pose]:
        return float(self._times[i]), self._poses[i]

    @property
    def start(self) -> Pose:
        return self._poses[0]

    @property
    def end(self) -> Pose:
        return self._poses[-1]

    def positions(self) -> np.ndarray:
        return np.stack([p.position for p in self._poses])

    def rpys(self) -> np.ndarray:
        return np.stack([p.rpy for p in self._poses])

    def reversed(self) -> "Trajectory":
        t_end = self._times[-1]
        samples = [(float(t_end - t), p)
                   for t, p in zip(self._times[::-1], self._poses[::-1])]
        return Trajectory(samples)

    def path_length(self) -> float:
        pos = self.positions()
        return float(np.sum(np.linalg.norm(np.diff(pos, axis=0), axis=1)))


# --------------------------------------------------------------------------
# Parameter blocks.  Every numeric default below is a named key in the YAML
# config file; see RunConfig.load / RunConfig.to_dict.
# --------------------------------------------------------------------------


@dataclass
class MediaParams:
    """Granular-media constants for the resistive force model."""

    k: float = 2.5                  # material constant (glass particles)
    rho: float = 2500.0             # effective density, kg/m^3
    g: float = 9.81                 # gravity, m/s^2
    C: float = 1.0                  # normal-response constant
    gamma0: float = math.pi / 6     # internal friction angle, rad
    grain_diameter: float = 3e-4    # m
    surface_height: float = 0.10    # free-surface z, m

    def validate(self) -> None:
        if not self.k > 0:
            raise ConfigError(f"media.k must be > 0, got {self.k}")
        if not self.rho > 0:
            raise ConfigError(f"media.rho must be > 0, got {self.rho}")
        if not self.g > 0:
            raise ConfigError(f"media.g must be > 0, got {self.g}")
        if self.C < 0:
            raise ConfigError(f"media.C must be >= 0, got {self.C}")
        if not 0 < self.gamma0 < math.pi / 2:
            raise ConfigError(
                f"media.gamma0 must be in (0, pi/2), got {self.gamma0}")
        if not self.grain_diameter > 0:
            raise ConfigError(
                f"media.grain_diameter must be > 0, got {self.grain_diameter}")


@dataclass
class SimParams:
    """World geometry, capture/pour model constants and integration step."""

    bed_origin: tuple[float, float, float] = (0.25, -0.15, 0.0)
    bed_size: tuple[float, float, float] = (0.30, 0.30, 0.15)
    fill_height: float = 0.10          # media fill level above bed bottom, m
    bulk_density: float = 1500.0       # packed-bed density for capture, kg/m^3
    blade_width: float = 0.08          # m
    blade_length: float = 0.10         # m
    scoop_capacity: float = 0.3        # kg
    hold_angle: float = math.pi / 6    # pour starts beyond this tilt, rad
    full_pour_angle: float = math.pi / 2
    dt: float = 0.01                   # s
    goal_container_x: float = 0.70
    goal_container_z: float = 0.22     # rim height, m
    goal_container_radius: float = 0.06
    scoop_goal_mass_min: float = 0.25  # scoop-success threshold, kg
    ft_noise_sigma: float = 0.0        # wrist F/T noise, N
    arm_base: tuple[float, float, float] = (0.10, 0.0, 0.40)
    link_lengths: tuple[float, float, float] = (0.30, 0.30, 0.15)
    joint_damping: float = 40.0        # N*m*s/rad
    joint_limit: float = 3.1           # symmetric joint bound, rad

    def validate(self) -> None:
        if not 0 < self.hold_angle < self.full_pour_angle <= math.pi / 2:
            raise ConfigError(
                "sim requires 0 < hold_angle < full_pour_angle <= pi/2, got "
                f"hold_angle={self.hold_angle}, full_pour_angle={self.full_pour_angle}")
        if self.fill_height > self.bed_size[2]:
            raise ConfigError(
                f"sim.fill_height {self.fill_height} exceeds bed z-extent "
                f"{self.bed_size[2]}")
        if not self.scoop_capacity > 0:
            raise ConfigError(
                f"sim.scoop_capacity must be > 0, got {self.scoop_capacity}")
        if not self.dt > 0:
            raise ConfigError(f"sim.dt must be > 0, got {self.dt}")
        if any(l <= 0 for l in self.link_lengths):
            raise ConfigError(
                f"sim.link_lengths must be > 0, got {self.link_lengths}")

    @property
    def goal_container_pose(self) -> Pose:
        return Pose((self.goal_container_x, 0.0, self.goal_container_z))

    @property
    def surface_height(self) -> float:
        return self.bed_origin[2] + self.fill_height

    @property
    def initial_bed_mass(self) -> float:
        bx, by, _ = self.bed_size
        return self.bulk_density * bx * by * self.fill_height


@dataclass
class LearnParams:
    """Hyperparameters shared by the self-evaluation learner and the bandit."""

    alpha: float = 0.5            # learning rate, (0, 1]
    gamma: float = 0.9            # discount, [0, 1)
    c1: float = 1.0               # success reward scale
    c2: float = 2.0               # failure penalty, must exceed c1
    beta: float = 1.0             # effort-shaping weight, >= 0
    epsilon0: float = 1.0
    epsilon_decay: float = 0.85
    epsilon_min: float = 0.05
    max_episodes: int = 30

    def validate(self) -> None:
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"rl.alpha must be in (0, 1], got {self.alpha}")
        if not 0 <= self.gamma < 1:
            raise ConfigError(f"rl.gamma must be in [0, 1), got {self.gamma}")
        if not self.c2 > self.c1 > 0:
            raise ConfigError(
                f"rl requires c2 > c1 > 0, got c1={self.c1}, c2={self.c2}")
        if self.beta < 0:
            raise ConfigError(f"rl.beta must be >= 0, got {self.beta}")
        if not 0 < self.epsilon0 <= 1:
            raise ConfigError(
                f"rl.epsilon0 must be in (0, 1], got {self.epsilon0}")
        if not 0 < self.epsilon_decay < 1:
            raise ConfigError(
                f"rl.epsilon_decay must be in (0, 1), got {self.epsilon_decay}")
        if not 0 <= self.epsilon_min <= self.epsilon0:
            raise ConfigError(
                f"rl.epsilon_min must be in [0, epsilon0], got {self.epsilon_min}")
        if self.max_episodes < 1:
            raise ConfigError(
                f"rl.max_episodes must be >= 1, got {self.max_episodes}")


@dataclass
class ControlParams:
    """Controller gains and skill goal tolerances."""

    k1: float = 0.2               # kinematic proportional gain
    k2: float = 0.1               # kinematic difference gain
    K1: float = 50.0              # impedance stiffness, N/m
    K2: float = 0.1               # impedance difference gain
    f_desired_normal: float = 8.0  # scoop blade-normal force target, N
    pos_tol: float = 1e-3         # goal-pose position tolerance, m
    ang_tol: float = math.radians(0.5)
    contact_threshold: float = 0.5  # move_to_contact wrench trigger, N
    transfer_tol: float = 0.15    # unscoop relative mass tolerance
    timeout: float = 10.0         # skill timeout, sim seconds

    def validate(self) -> None:
        if not self.k1 > 0 or self.k2 < 0:
            raise ConfigError(
                f"control requires k1 > 0 and k2 >= 0, got k1={self.k1}, k2={self.k2}")
        if not self.K1 > 0 or self.K2 < 0:
            raise ConfigError(
                f"control requires K1 > 0 and K2 >= 0, got K1={self.K1}, K2={self.K2}")


@dataclass
class PlannerParams:
    """Least-effort path solver settings."""

    n_waypoints: int = 9
    samples_per_segment: int = 4
    pitch_min: float = -1.4
    pitch_max: float = 0.7
    depth_max: float = 0.08
    max_iters: int = 200
    tol: float = 1e-6             # J
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    fd_step: float = 1e-6
    elements_x: int = 11          # blade grid, along length
    elements_y: int = 11          # blade grid, along width

    def validate(self) -> None:
        if self.n_waypoints < 3:
            raise ConfigError(
                f"planner.n_waypoints must be >= 3, got {self.n_waypoints}")
        if not self.pitch_min < self.pitch_max:
            raise ConfigError("planner pitch bounds must be a non-empty interval")
        if not self.depth_max > 0:
            raise ConfigError(
                f"planner.depth_max must be > 0, got {self.depth_max}")
        if self.elements_x < 2 or self.elements_y < 2:
            raise ConfigError("planner blade grid must be at least 2x2")


@dataclass
class RunConfig:
    """Root configuration: seed plus per-module parameter blocks."""

    seed: int = 12345
    media: MediaParams = field(default_factory=MediaParams)
    sim: SimParams = field(default_factory=SimParams)
    rl: LearnParams = field(default_factory=LearnParams)
    selfeval: LearnParams = field(default_factory=lambda: LearnParams(
        epsilon_decay=0.995, epsilon_min=0.02, max_episodes=800))
    control: ControlParams = field(default_factory=ControlParams)
    planner: PlannerParams = field(default_factory=PlannerParams)

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed}")
        self.media.validate()
        self.sim.validate()
        self.rl.validate()
        self.selfeval.validate()
        self.control.validate()
        self.planner.validate()
        # keep the RFT free surface and the bed fill level consistent
        if abs(self.media.surface_height - self.sim.surface_height) > 1e-12:
            raise ConfigError(
                "media.surface_height must equal bed_origin_z + fill_height "
                f"({self.media.surface_height} != {self.sim.surface_height})")

    def to_dict(self) -> dict:
        def block(obj) -> dict:
            out = {}
            for f in fields(obj):
                v = getattr(obj, f.name)
                out[f.name] = list(v) if isinstance(v, tuple) else v
            return out

        return {
            "seed": self.seed,
            "media": block(self.media),
            "sim": block(self.sim),
            "rl": block(self.rl),
            "selfeval": block(self.selfeval),
            "control": block(self.control),
            "planner": block(self.planner),
        }

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls()
        known = {f.name: f for f in fields(cls)}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(f"unknown config section {key!r}")
            if key == "seed":
                cfg.seed = int(value)
                continue
            section = getattr(cfg, key)
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be a mapping")
            section_fields = {f.name: f for f in fields(section)}
            for name, v in value.items():
                if name not in section_fields:
                    raise ConfigError(f"unknown config key {key}.{name}")
                current = getattr(section, name)
                if isinstance(current, tuple):
                    v = tuple(float(x) for x in v)
                elif isinstance(current, int) and not isinstance(current, bool):
                    v = int(v)
                else:
                    v = float(v)
                setattr(section, name, v)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        return cls.from_dict(data)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))


def artifact_header(config: RunConfig, seed: int) -> str:
    """Header line stamped on every output artifact."""
    return f"# scoopsim config_hash={config.config_hash()} seed={seed}"
