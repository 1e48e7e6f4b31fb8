"""Deterministic scooping world.

A 3-revolute planar arm (vertical x-z plane) carries a flat scoop blade.
The granular bed reacts through the RFT model; captured material follows a
swept-layer bookkeeping rule and pouring follows a piecewise-linear tilt
model.  Mass is conserved exactly: every transfer moves the same increment
between bed, scoop and goal container.

Capture rule: while the blade tip is below the free surface and inside the
bed footprint, horizontal tip motion dx at tip depth d collects
``bulk_density * blade_width * d * |dx|`` kilograms, capped at the scoop
capacity.  The bed surface is not re-profiled, so the rule stays
deterministic and monotone in sweep depth.

Pour rule: tilting the blade tip down by more than ``hold_angle`` releases
a fraction of the held mass, linear in tilt up to ``full_pour_angle``.
Material only transfers while the blade is over the goal container; the
poured fraction tracks the maximum tilt reached, so transfer is monotone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import MediaParams, Pose, SimParams, Twist, normalize_angle
from .media import BladeGeometry, intruder_force


@dataclass(frozen=True)
class ArmModel:
    """Planar 3-link arm: all joints revolute in the vertical x-z plane."""

    link_lengths: tuple[float, float, float]
    joint_damping: float
    base: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if any(l <= 0 for l in self.link_lengths):
            raise ValueError("link lengths must be positive")

    def forward(self, joints: np.ndarray) -> Pose:
        """End-effector pose; pitch is the cumulative joint angle."""
        q = np.asarray(joints, dtype=float)
        x, z = self.base[0], self.base[2]
        angle = 0.0
        for l, qi in zip(self.link_lengths, q):
            angle += qi
            x += l * math.cos(angle)
            z += l * math.sin(angle)
        return Pose((x, self.base[1], z), (0.0, normalize_angle(angle), 0.0))

    def jacobian(self, joints: np.ndarray) -> np.ndarray:
        """6x3 Jacobian mapping joint rates to (v_xyz, rpy rates)."""
        q = np.asarray(joints, dtype=float)
        angles = np.cumsum(q)
        # joint origins
        ox = [self.base[0]]
        oz = [self.base[2]]
        for l, a in zip(self.link_lengths[:-1], angles[:-1]):
            ox.append(ox[-1] + l * math.cos(a))
            oz.append(oz[-1] + l * math.sin(a))
        ee = self.forward(q)
        ex, ez = float(ee.position[0]), float(ee.position[2])
        jac = np.zeros((6, 3))
        for j in range(3):
            rx, rz = ex - ox[j], ez - oz[j]
            # planar rotation: d(position)/dq_j is perpendicular to the lever
            jac[0, j] = -rz
            jac[2, j] = rx
            jac[4, j] = 1.0
        return jac

    def inverse(self, pose: Pose) -> tuple[np.ndarray, bool]:
        """Analytic IK (elbow-up) for planar position + pitch.

        Returns (joints, reachable).  When the wrist target is out of reach
        the arm stretches toward it and ``reachable`` is False.
        """
        l1, l2, l3 = self.link_lengths
        pitch = pose.pitch
        wx = float(pose.position[0]) - l3 * math.cos(pitch) - self.base[0]
        wz = float(pose.position[2]) - l3 * math.sin(pitch) - self.base[2]
        r2 = wx * wx + wz * wz
        r = math.sqrt(r2)
        reachable = True
        cos_q2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
        if cos_q2 > 1.0:
            cos_q2 = 1.0
            reachable = False
        elif cos_q2 < -1.0:
            cos_q2 = -1.0
            reachable = False
        q2 = -math.acos(cos_q2)  # elbow-up branch
        if r < 1e-12:
            q1 = 0.0
            reachable = False
        else:
            q1 = math.atan2(wz, wx) - math.atan2(l2 * math.sin(q2),
                                                 l1 + l2 * math.cos(q2))
        q3 = normalize_angle(pitch - q1 - q2)
        return np.array([normalize_angle(q1), normalize_angle(q2), q3]), reachable


def jacobian(arm: ArmModel, joints: np.ndarray) -> np.ndarray:
    return arm.jacobian(joints)


def pour_fraction(pitch: float, params: SimParams) -> float:
    """Fraction of held mass released at a given tilt angle.

    Zero at or below ``hold_angle``, one at or beyond ``full_pour_angle``,
    linear in between; monotone non-decreasing.
    """
    if pitch <= params.hold_angle:
        return 0.0
    if pitch >= params.full_pour_angle:
        return 1.0
    return (pitch - params.hold_angle) / (params.full_pour_angle - params.hold_angle)


@dataclass(frozen=True)
class PoseIncrement:
    dposition: tuple[float, float, float]
    drpy: tuple[float, float, float]

    @classmethod
    def between(cls, current: Pose, target: Pose) -> "PoseIncrement":
        err = current.error_to(target)
        return cls(tuple(err[:3]), tuple(err[3:]))


@dataclass(frozen=True)
class JointTorques:
    tau: tuple[float, float, float]


Command = Union[PoseIncrement, JointTorques]


@dataclass(frozen=True)
class WorldState:
    """Snapshot of the scooping world (immutable; step() returns a copy)."""

    scoop_pose: Pose
    scoop_twist: Twist
    mass_in_scoop: float
    mass_in_bed: float
    mass_transferred: float
    arm_joint_angles: np.ndarray
    time: float
    initial_bed_mass: float
    joint_limit_hit: bool = False
    pour_base_mass: float = 0.0
    pour_max_tilt: float = 0.0

    def mass_error(self) -> float:
        total = self.mass_in_bed + self.mass_in_scoop + self.mass_transferred
        return abs(total - self.initial_bed_mass)


class World:
    """Owns the parameters and geometry; steps WorldState snapshots."""

    def __init__(self, sim: SimParams, media: MediaParams,
                 blade: BladeGeometry | None = None):
        sim.validate()
        media.validate()
        self.sim = sim
        self.media = media
        self.blade = blade or BladeGeometry(sim.blade_length, sim.blade_width)
        self.arm = ArmModel(sim.link_lengths, sim.joint_damping, sim.arm_base)

    # -- state construction -------------------------------------------------

    def initial_state(self, scoop_pose: Pose | None = None,
                      mass_in_scoop: float = 0.0) -> WorldState:
        if scoop_pose is None:
            scoop_pose = Pose((self.sim.bed_origin[0] - 0.05, 0.0,
                               self.sim.surface_height + 0.10))
        joints, reachable = self.arm.inverse(scoop_pose)
        if not reachable:
            raise ValueError(f"initial scoop pose {scoop_pose.as_tuple()} "
                             "is outside the arm workspace")
        mass_in_scoop = min(mass_in_scoop, self.sim.scoop_capacity)
        bed0 = self.sim.initial_bed_mass
        return WorldState(
            scoop_pose=scoop_pose,
            scoop_twist=Twist(),
            mass_in_scoop=mass_in_scoop,
            mass_in_bed=bed0 - mass_in_scoop,
            mass_transferred=0.0,
            arm_joint_angles=joints,
            time=0.0,
            initial_bed_mass=bed0,
        )

    def loaded_state(self, scoop_pose: Pose) -> WorldState:
        """State with the scoop pre-loaded to capacity (coaching setup)."""
        return self.initial_state(scoop_pose, self.sim.scoop_capacity)

    # -- geometry helpers ---------------------------------------------------

    def over_bed(self, point: np.ndarray) -> bool:
        ox, oy, _ = self.sim.bed_origin
        sx, sy, _ = self.sim.bed_size
        return ox <= point[0] <= ox + sx and oy <= point[1] <= oy + sy

    def over_goal_container(self, point: np.ndarray) -> bool:
        dx = point[0] - self.sim.goal_container_x
        dy = point[1] - 0.0
        return math.hypot(dx, dy) <= self.sim.goal_container_radius

    def blade_submerged(self, pose: Pose) -> bool:
        arr = self.blade.elements_at(pose)
        below = arr.centroids[:, 2] < self.media.surface_height
        return bool(np.any(below)) and self.over_bed(pose.position)

    def rft_reaction(self, pose: Pose, twist: Twist):
        """RFT (force, torque) on the blade about its center pose."""
        if not self.over_bed(pose.position):
            return np.zeros(3), np.zeros(3)
        arr = self.blade.elements_at(pose)
        return intruder_force(arr, twist, self.media, ref_point=pose.position)

    # -- stepping -----------------------------------------------------------

    def step(self, state: WorldState, command: Command) -> WorldState:
        dt = self.sim.dt
        if isinstance(command, PoseIncrement):
            values = np.concatenate([command.dposition, command.drpy])
            if not np.all(np.isfinite(values)):
                raise ValueError("pose increment must be finite")
            # planar world: y translation and roll/yaw are clamped away
            planar_loss = abs(command.dposition[1]) + abs(command.drpy[0]) \
                + abs(command.drpy[2])
            target = state.scoop_pose.offset(
                (command.dposition[0], 0.0, command.dposition[2]),
                (0.0, command.drpy[1], 0.0))
            joints, reachable = self.arm.inverse(target)
            limit = self.sim.joint_limit
            clamped = np.clip(joints, -limit, limit)
            hit = bool(not reachable or np.any(clamped != joints)
                       or planar_loss > 1e-12)
            if reachable and np.all(clamped == joints):
                new_pose = target
            else:
                new_pose = self.arm.forward(clamped)
            joints = clamped
        elif isinstance(command, JointTorques):
            tau = np.asarray(command.tau, dtype=float)
            if not np.all(np.isfinite(tau)):
                raise ValueError("joint torques must be finite")
            f_ext, _ = self.rft_reaction(state.scoop_pose, state.scoop_twist)
            jac = self.arm.jacobian(state.arm_joint_angles)
            tau_ext = jac[:3].T @ f_ext
            qdot = (tau + tau_ext) / self.sim.joint_damping
            joints = state.arm_joint_angles + qdot * dt
            limit = self.sim.joint_limit
            clamped = np.clip(joints, -limit, limit)
            hit = bool(np.any(clamped != joints))
            joints = clamped
            new_pose = self.arm.forward(joints)
        else:
            raise TypeError(f"unsupported command {command!r}")

        lin = (new_pose.position - state.scoop_pose.position) / dt
        ang = np.array([normalize_angle(b - a) for a, b in
                        zip(state.scoop_pose.rpy, new_pose.rpy)]) / dt
        twist = Twist(lin, ang)

        scoop = state.mass_in_scoop
        bed = state.mass_in_bed
        transferred = state.mass_transferred
        pour_base = state.pour_base_mass
        pour_tilt = state.pour_max_tilt

        # capture: swept layer under the moving tip
        tip_old = self.blade.tip_position(state.scoop_pose)
        tip_new = self.blade.tip_position(new_pose)
        surface = self.media.surface_height
        depth_mid = surface - 0.5 * (tip_old[2] + tip_new[2])
        if (depth_mid > 0.0 and tip_old[2] < surface and tip_new[2] < surface
                and self.over_bed(tip_old) and self.over_bed(tip_new)):
            dxy = math.hypot(tip_new[0] - tip_old[0], tip_new[1] - tip_old[1])
            captured = self.sim.bulk_density * self.sim.blade_width \
                * depth_mid * dxy
            captured = min(captured, self.sim.scoop_capacity - scoop, bed)
            if captured > 0.0:
                scoop += captured
                bed -= captured
                # a fresh load invalidates any previous pour bookkeeping
                pour_base = 0.0
                pour_tilt = 0.0

        # pour: tip-down tilt beyond the hold angle, only over the container
        tilt = max(0.0, -new_pose.pitch)
        if scoop > 0.0 and self.over_goal_container(new_pose.position) \
                and not self.blade_submerged(new_pose):
            if tilt > self.sim.hold_angle:
                if pour_base <= 0.0:
                    pour_base = scoop
                    pour_tilt = 0.0
                if tilt > pour_tilt:
                    pour_tilt = tilt
                    target_out = pour_fraction(pour_tilt, self.sim) * pour_base
                    already_out = pour_base - scoop
                    dm = min(target_out - already_out, scoop)
                    if dm > 0.0:
                        scoop -= dm
                        transferred += dm

        return WorldState(
            scoop_pose=new_pose,
            scoop_twist=twist,
            mass_in_scoop=scoop,
            mass_in_bed=bed,
            mass_transferred=transferred,
            arm_joint_angles=joints,
            time=state.time + dt,
            initial_bed_mass=state.initial_bed_mass,
            joint_limit_hit=hit,
            pour_base_mass=pour_base,
            pour_max_tilt=pour_tilt,
        )

    # -- sensing ------------------------------------------------------------

    def wrist_ft_reading(self, state: WorldState,
                         rng: np.random.Generator | None = None):
        """Simulated wrist force/torque: gravity load plus RFT reaction."""
        grav = np.array([0.0, 0.0, -state.mass_in_scoop * self.media.g])
        f_rft, tau_rft = self.rft_reaction(state.scoop_pose, state.scoop_twist)
        force = grav + f_rft
        torque = tau_rft.copy()
        sigma = self.sim.ft_noise_sigma
        if sigma > 0.0 and rng is not None:
            force = force + rng.normal(0.0, sigma, 3)
            torque = torque + rng.normal(0.0, sigma, 3)
        return force, torque

    def estimate_scoop_mass(self, state: WorldState,
                            rng: np.random.Generator | None = None) -> float:
        """Mass estimate from a static in-air wrist reading."""
        force, _ = self.wrist_ft_reading(state, rng)
        return float(-force[2] / self.media.g)
