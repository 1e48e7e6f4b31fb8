"""A priori skill controllers and policy execution.

Kinematic skills follow the discrete position law

    x_{t+1} = x_t + k1 * (f + k2 * df)

with ``f`` the 6-DoF pose error (angles normalized) and ``df`` its backward
difference.  Force-based skills run an impedance law mapped through the arm
Jacobian transpose,

    tau = J^T (F_d + K1 * (f + K2 * df)),

where the feedback term is also applied through J^T so the sum is
dimensionally a joint torque.  Both laws are pure functions of their inputs;
history enters only through the supplied previous error.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from .core import ControlParams, Pose
from .sim import PoseIncrement, World, WorldState, pour_fraction

if TYPE_CHECKING:  # policy types live in demo; avoid the import cycle
    from .demo import Policy, SkillStep


class SkillClass(enum.Enum):
    APPROACH = "approach"
    GRASP = "grasp"
    TRANSPORT = "transport"
    RETRACT = "retract"
    SCOOP = "scoop"
    UNSCOOP = "unscoop"
    GUARDED_MOVE = "guarded_move"
    VISUAL_SERVO = "visual_servo"
    MOVE_WITH_CONTACT = "move_with_contact"
    MOVE_TO_CONTACT = "move_to_contact"
    LIFT = "lift"


#: skills driven by the impedance/force pathway; everything else is positional
FORCE_BASED = frozenset({SkillClass.SCOOP, SkillClass.MOVE_WITH_CONTACT,
                         SkillClass.MOVE_TO_CONTACT, SkillClass.GRASP})

#: classes whose completion establishes blade/bed contact
ESTABLISHES_CONTACT = frozenset({SkillClass.MOVE_TO_CONTACT,
                                 SkillClass.MOVE_WITH_CONTACT,
                                 SkillClass.SCOOP})

#: classes whose completion leaves the blade above the goal container
ESTABLISHES_AT_GOAL = frozenset({SkillClass.TRANSPORT})


@dataclass
class ControllerGains:
    """Gain set for both control laws plus the desired wrench."""

    k1: float = 0.2
    k2: float = 0.1
    K1: float = 50.0
    K2: float = 0.1
    F_d: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        if not self.k1 > 0 or self.k2 < 0:
            raise ValueError("gains require k1 > 0 and k2 >= 0")
        if not self.K1 > 0 or self.K2 < 0:
            raise ValueError("gains require K1 > 0 and K2 >= 0")
        self.F_d = np.asarray(self.F_d, dtype=float)

    @classmethod
    def from_params(cls, params: ControlParams) -> "ControllerGains":
        return cls(k1=params.k1, k2=params.k2, K1=params.K1, K2=params.K2)


class KinematicResult(NamedTuple):
    pose: Pose
    error: np.ndarray


def kinematic_step(x_t: Pose, x_d: Pose, gains: ControllerGains,
                   f_prev: np.ndarray | None = None) -> KinematicResult:
    """One step of the kinematic law; returns the new pose and the error
    used, so callers can thread it back in as ``f_prev``."""
    f = x_t.error_to(x_d)
    fdot = np.zeros(6) if f_prev is None else f - f_prev
    delta = gains.k1 * (f + gains.k2 * fdot)
    return KinematicResult(x_t.offset(delta[:3], delta[3:]), f)


class ImpedanceResult(NamedTuple):
    tau: np.ndarray
    error: np.ndarray
    singular: bool


def impedance_step(arm, joints: np.ndarray, x_d: Pose,
                   gains: ControllerGains,
                   f_prev: np.ndarray | None = None) -> ImpedanceResult:
    """One step of the impedance law in joint space."""
    x_t = arm.forward(joints)
    f = x_t.error_to(x_d)
    fdot = np.zeros(6) if f_prev is None else f - f_prev
    jac = arm.jacobian(joints)
    wrench = gains.F_d + gains.K1 * (f + gains.K2 * fdot)
    tau = jac.T @ wrench
    singular = bool(np.linalg.matrix_rank(jac, tol=1e-9) < 3)
    return ImpedanceResult(tau, f, singular)


@dataclass
class SkillOutcome:
    skill: SkillClass
    reached_goal: bool
    final_state: WorldState
    effort: float
    trace: list[dict] = field(default_factory=list)
    halt_reason: str = ""


def _segment_drag_work(world: World, before: Pose, after: Pose) -> float:
    """Work done against the media between two poses (midpoint rule, same
    convention as media.path_work)."""
    delta = after.position - before.position
    step = float(np.linalg.norm(delta))
    if step < 1e-15:
        return 0.0
    from .core import normalize_angle
    dang = [normalize_angle(b - a) for a, b in zip(before.rpy, after.rpy)]
    mid = Pose((before.position + after.position) / 2.0,
               [a + 0.5 * d for a, d in zip(before.rpy, dang)])
    if not world.over_bed(mid.position):
        return 0.0
    force = world.blade.drag_force(mid, delta / step, world.media)
    return float(-force @ delta)


class SkillExecutor:
    """Runs one skill at a time against a world, accumulating effort."""

    def __init__(self, world: World, params: ControlParams):
        self.world = world
        self.params = params
        self.gains = ControllerGains.from_params(params)

    # -- goal predicates ----------------------------------------------------

    def _pose_goal(self, state: WorldState, goal: Pose) -> bool:
        err = state.scoop_pose.error_to(goal)
        return (np.max(np.abs(err[:3])) < self.params.pos_tol
                and np.max(np.abs(err[3:])) < self.params.ang_tol)

    def _contact_goal(self, state: WorldState) -> bool:
        force, _ = self.world.rft_reaction(state.scoop_pose, state.scoop_twist)
        return float(np.linalg.norm(force)) >= self.params.contact_threshold

    # -- skill execution ----------------------------------------------------

    def execute(self, step: "SkillStep", state: WorldState) -> SkillOutcome:
        skill = step.skill
        if skill == SkillClass.SCOOP:
            return self._run_scoop(step, state)
        if skill == SkillClass.UNSCOOP:
            return self._run_unscoop(step, state)
        if skill == SkillClass.MOVE_TO_CONTACT:
            return self._run_move_to_contact(step, state)
        # positional skills (approach/transport/lift/retract and the
        # pose-only stubs for grasp/visual_servo/guarded_move/...)
        return self._run_kinematic(step, state)

    def _loop(self, state: WorldState, advance, goal, max_steps=None):
        """Common stepping loop: advance until goal or timeout; the world is
        never advanced again after the goal first holds."""
        effort = 0.0
        trace = []
        limit = max_steps or int(self.params.timeout / self.world.sim.dt)
        reached = bool(goal(state))
        steps = 0
        while not reached and steps < limit:
            cmd = advance(state)
            before = state.scoop_pose
            state = self.world.step(state, cmd)
            effort += _segment_drag_work(self.world, before, state.scoop_pose)
            trace.append(_trace_record(self.world, state))
            reached = bool(goal(state))
            steps += 1
        return state, reached, effort, trace

    def _run_kinematic(self, step: "SkillStep", state: WorldState) -> SkillOutcome:
        goal_pose = step.goal_pose
        history = {"f_prev": None}

        def advance(s: WorldState):
            result = kinematic_step(s.scoop_pose, goal_pose, self.gains,
                                    history["f_prev"])
            history["f_prev"] = result.error
            return PoseIncrement.between(s.scoop_pose, result.pose)

        state, reached, effort, trace = self._loop(
            state, advance, lambda s: self._pose_goal(s, goal_pose))
        return SkillOutcome(step.skill, reached, state, effort, trace,
                            "" if reached else "timeout before goal pose")

    def _run_move_to_contact(self, step: "SkillStep",
                             state: WorldState) -> SkillOutcome:
        goal_pose = step.goal_pose
        history = {"f_prev": None}
        descend = PoseIncrement((0.0, 0.0, -5e-4), (0.0, 0.0, 0.0))

        def advance(s: WorldState):
            if self._pose_goal(s, goal_pose):
                return descend  # past the nominal pose: creep down
            result = kinematic_step(s.scoop_pose, goal_pose, self.gains,
                                    history["f_prev"])
            history["f_prev"] = result.error
            return PoseIncrement.between(s.scoop_pose, result.pose)

        state, reached, effort, trace = self._loop(
            state, advance, self._contact_goal)
        return SkillOutcome(step.skill, reached, state, effort, trace,
                            "" if reached else "no contact before timeout")

    def _run_scoop(self, step: "SkillStep", state: WorldState) -> SkillOutcome:
        traj = step.trajectory
        if traj is None:
            raise ValueError("scoop step needs a trajectory "
                             "(planned, tuned, or derived from the segment)")
        mass_min = self.world.sim.scoop_goal_mass_min
        poses = traj.poses
        cursor = {"i": 0}
        force_gain = 1e-5  # m per N of wrench error, hybrid trim

        def advance(s: WorldState):
            i = min(cursor["i"], len(poses) - 1)
            target = poses[i]
            cursor["i"] += 1
            result = kinematic_step(s.scoop_pose, target,
                                    ControllerGains(k1=1.0, k2=0.0))
            increment = PoseIncrement.between(s.scoop_pose, result.pose)
            f_d = self.params.f_desired_normal
            if f_d > 0.0:
                # hybrid: position tangent to the path, force trim normal to
                # the blade (deeper when the felt wrench is below target)
                force, _ = self.world.rft_reaction(s.scoop_pose, s.scoop_twist)
                err = f_d - float(np.linalg.norm(force))
                dz = float(np.clip(force_gain * err, -5e-4, 5e-4))
                increment = PoseIncrement(
                    (increment.dposition[0], increment.dposition[1],
                     increment.dposition[2] - dz),
                    increment.drpy)
            return increment

        def goal(s: WorldState) -> bool:
            return (cursor["i"] >= len(poses)
                    and s.mass_in_scoop >= mass_min)

        state, reached, effort, trace = self._loop(
            state, advance, goal, max_steps=len(poses) + 50)
        return SkillOutcome(step.skill, reached, state, effort, trace,
                            "" if reached else
                            f"scooped {state.mass_in_scoop:.3f} kg, "
                            f"needed {mass_min:.3f} kg")

    def _run_unscoop(self, step: "SkillStep", state: WorldState) -> SkillOutcome:
        """Tilt down until the transferred mass sits in the goal band (force
        feedback in place of direct mass observation), then orient back to
        the carry pitch."""
        target_transfer = step.target_transfer
        if target_transfer is None:
            target_transfer = pour_fraction(step.max_tilt or 0.0,
                                            self.world.sim) * state.mass_in_scoop
        tilt = step.max_tilt
        if tilt is None:
            tilt = self.world.sim.hold_angle + (
                self.world.sim.full_pour_angle - self.world.sim.hold_angle) * 0.5
        anchor = state.scoop_pose.position
        pour_pose = Pose(anchor, (0.0, -abs(tilt), 0.0))
        carry_pose = Pose(anchor, (0.0, 0.0, 0.0))
        history = {"f_prev": None}
        start_transferred = state.mass_transferred
        tol = max(self.params.transfer_tol * target_transfer, 1e-6)

        def in_band(s: WorldState) -> bool:
            moved = s.mass_transferred - start_transferred
            return target_transfer > 0 and abs(moved - target_transfer) <= tol

        def advance(s: WorldState):
            target = carry_pose if in_band(s) else pour_pose
            result = kinematic_step(s.scoop_pose, target, self.gains,
                                    history["f_prev"])
            history["f_prev"] = result.error
            return PoseIncrement.between(s.scoop_pose, result.pose)

        def goal(s: WorldState) -> bool:
            return in_band(s) and s.scoop_pose.pitch > -self.params.ang_tol

        state, reached, effort, trace = self._loop(state, advance, goal)
        moved = state.mass_transferred - start_transferred
        return SkillOutcome(step.skill, reached, state, effort, trace,
                            "" if reached else
                            f"transferred {moved * 1e3:.1f} g, target "
                            f"{target_transfer * 1e3:.1f} g")


def _trace_record(world: World, state: WorldState) -> dict:
    force, torque = world.wrist_ft_reading(state)
    return {
        "t": round(state.time, 9),
        "pose": list(state.scoop_pose.as_tuple()),
        "mass_in_scoop": state.mass_in_scoop,
        "mass_in_bed": state.mass_in_bed,
        "mass_transferred": state.mass_transferred,
        "wrench": [float(v) for v in force] + [float(v) for v in torque],
    }


def execute_skill(step: "SkillStep", world: World, state: WorldState,
                  params: ControlParams) -> SkillOutcome:
    return SkillExecutor(world, params).execute(step, state)


def execute_policy(policy: "Policy", world: World, state: WorldState,
                   params: ControlParams) -> list[SkillOutcome]:
    """Run the policy's skills in order, halting at the first failure."""
    executor = SkillExecutor(world, params)
    outcomes: list[SkillOutcome] = []
    for step in policy.steps:
        outcome = executor.execute(step, state)
        outcomes.append(outcome)
        state = outcome.final_state
        if not outcome.reached_goal:
            outcome.halt_reason = outcome.halt_reason or "skill failed"
            break
    return outcomes
