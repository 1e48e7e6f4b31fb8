"""Glue between the pipeline stages.

The demonstration fixes the scoop's boundary poses and depth profile; the
planner then finds the least-effort blade pitch profile along it; the
executable policy binds that trajectory to its scoop step.  Self-evaluation
and coaching sessions build their worlds through the factories here so the
CLI, the service and the tests all construct identical setups from one
(config, seed) pair.
"""

from __future__ import annotations

import numpy as np

from .control import SkillClass
from .core import Pose, RunConfig, Trajectory
from .demo import DemoFrame, DemoScript, ObjectMeta, Policy, generate_demo, \
    infer_policy
from .media import BladeGeometry
from .planner import PathProblem, PlannedPath, solve_least_effort
from .sim import World


def make_world(config: RunConfig) -> World:
    blade = BladeGeometry(config.sim.blade_length, config.sim.blade_width,
                          config.planner.elements_x, config.planner.elements_y)
    return World(config.sim, config.media, blade)


def scoop_problem_from_demo(frames: list[DemoFrame], policy: Policy,
                            config: RunConfig) -> PathProblem:
    """Path problem for the demonstrated scoop segment.

    Endpoints come from the segment boundaries.  The depth profile is pinned
    waypoint-by-waypoint to the demonstrated sweep (degenerate bounds): the
    planner and the self-evaluation learner tune blade orientation around
    the demonstrated dig, they do not re-plan how deep to dig.
    """
    scoop = next((s for s in policy.steps if s.skill == SkillClass.SCOOP
                  and s.segment is not None), None)
    if scoop is None:
        raise ValueError("policy contains no scoop step with a segment")
    seg = scoop.segment
    start = frames[seg.start].hand_pose
    end = frames[seg.end - 1].hand_pose
    surface = config.media.surface_height
    n = config.planner.n_waypoints
    m = n - 2
    # demo blade-center depth, resampled at the interior waypoint fractions
    ts = np.linspace(0.0, 1.0, seg.end - seg.start)
    zs = np.array([frames[i].hand_pose.position[2]
                   for i in range(seg.start, seg.end)])
    fracs = np.arange(1, m + 1) / (n - 1)
    depths = surface - np.interp(fracs, ts, zs)
    depth_bounds = np.column_stack([depths, depths])
    pitch_bounds = (config.planner.pitch_min, config.planner.pitch_max)
    return PathProblem(start=start, end=end, n_waypoints=n,
                       pitch_bounds=pitch_bounds, depth_bounds=depth_bounds)


def plan_scoop(frames: list[DemoFrame], policy: Policy,
               config: RunConfig) -> PlannedPath:
    problem = scoop_problem_from_demo(frames, policy, config)
    blade = BladeGeometry(config.sim.blade_length, config.sim.blade_width,
                          config.planner.elements_x, config.planner.elements_y)
    return solve_least_effort(problem, config.media, blade, config.planner)


def bind_scoop_trajectory(policy: Policy, trajectory: Trajectory) -> Policy:
    """Attach a planned/tuned trajectory to the policy's scoop step."""
    for step in policy.steps:
        if step.skill == SkillClass.SCOOP:
            step.trajectory = trajectory
            step.goal_pose = trajectory.end
            step.world_start_pose = trajectory.start
    # connectors inserted before the scoop should lead to its entry pose
    for prev, nxt in zip(policy.steps, policy.steps[1:]):
        if nxt.skill == SkillClass.SCOOP and prev.inserted \
                and prev.skill == SkillClass.MOVE_TO_CONTACT:
            prev.goal_pose = trajectory.start
    return policy


def demo_effort(frames: list[DemoFrame], policy: Policy,
                config: RunConfig) -> float:
    """Work done against the media along the demonstrated scoop segment."""
    from .media import path_work
    scoop = next(s for s in policy.steps if s.skill == SkillClass.SCOOP
                 and s.segment is not None)
    seg = scoop.segment
    samples = [(frames[i].time, frames[i].hand_pose)
               for i in range(seg.start, seg.end)]
    blade = BladeGeometry(config.sim.blade_length, config.sim.blade_width,
                          config.planner.elements_x, config.planner.elements_y)
    return path_work(Trajectory(samples), blade, config.media)


def coaching_start_pose(config: RunConfig) -> Pose:
    sim = config.sim
    return Pose((sim.goal_container_x, 0.0, sim.goal_container_z + 0.08))


def make_coaching_world_factory(config: RunConfig):
    """World factory for coaching episodes: scoop pre-loaded to capacity,
    hovering above the goal container in carry orientation."""
    def factory() -> tuple[World, "WorldState"]:
        world = make_world(config)
        state = world.loaded_state(coaching_start_pose(config))
        return world, state
    return factory


def canonical_demo(config: RunConfig, seed: int | None = None):
    seed = config.seed if seed is None else seed
    return generate_demo(config.sim, DemoScript(), seed=seed)


def infer_canonical_policy(config: RunConfig, seed: int | None = None):
    frames, objects, labels = canonical_demo(config, seed)
    policy = infer_policy(frames, objects)
    return frames, objects, labels, policy
