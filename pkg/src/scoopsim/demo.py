"""Demonstration ingestion and one-shot policy inference.

Demonstrations arrive as time-stamped frames carrying the hand pose, two
binary contact flags and declared object metadata (this replaces any vision
pipeline).  Physical interaction keypoints (PIKs) are the frames where the
contact pair (phi, psi) changes; they split the demo into segments.  Each
segment is reduced to the feature tuple (psi, relative trajectory,
separation-rate sign, moving/stationary, phi), classified by a fixed rule
tree into an a priori skill, and assembled into an executable policy with
transition skills inserted where a skill's entry condition is not
established by its predecessor.

The synthetic generator writes scripted scooping demos with ground-truth
contact flags and skill labels, which double as the segmentation oracle in
tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Pose, SimParams, Trajectory, normalize_angle, step_indicator
from .control import ESTABLISHES_AT_GOAL, ESTABLISHES_CONTACT, SkillClass

OBJECT_CLASSES = ("scoop-tool", "granular-bed", "goal-container", "rigid-surface")

#: hand speeds below this count as stationary (m/s)
V_EPS = 0.005

#: meters of translation that weigh as much as one radian of rotation when
#: deciding whether a segment is rotation-dominant
ROTATION_LENGTH_SCALE = 0.10


@dataclass(frozen=True)
class ObjectMeta:
    id: str
    cls: str
    grasp_orientation: Pose = field(default_factory=Pose)
    states: tuple[str, ...] = ()

    def __post_init__(self):
        if self.cls not in OBJECT_CLASSES:
            raise ValueError(f"unknown object class {self.cls!r}; expected "
                             f"one of {OBJECT_CLASSES}")


@dataclass(frozen=True)
class DemoFrame:
    time: float
    hand_pose: Pose
    phi: int                      # hand <-> nearest-object contact
    psi: int                      # held object <-> nearest-object contact
    held_object_id: str | None
    nearest_object_id: str
    object_poses: dict[str, Pose]

    def __post_init__(self):
        if self.phi not in (0, 1) or self.psi not in (0, 1):
            raise ValueError("contact flags must be 0 or 1")
        if self.held_object_id is not None and self.phi != 1:
            raise ValueError("phi must be 1 while an object is held")


@dataclass
class Segment:
    start: int                    # frame range [start, end)
    end: int
    phi: int
    psi: int
    relative_trajectory: Trajectory
    u_dx: int
    u_dy: int
    interacting_object_id: str
    rotation_dominant: bool
    used_nearest_fallback: bool = False

    @property
    def frame_range(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass
class SkillStep:
    skill: SkillClass
    goal_state: str
    goal_pose: Pose
    segment: Segment | None = None
    inserted: bool = False
    world_start_pose: Pose | None = None
    trajectory: Trajectory | None = None   # bound later by the pipeline
    target_transfer: float | None = None   # kg, unscoop goal amount
    max_tilt: float | None = None          # rad, tip-down tilt for unscoop


@dataclass
class Policy:
    steps: list[SkillStep]

    def __post_init__(self):
        if not self.steps:
            raise ValueError("policy must contain at least one skill")

    def skill_names(self) -> list[str]:
        return [s.skill.value for s in self.steps]


# --------------------------------------------------------------------------
# segmentation
# --------------------------------------------------------------------------


def detect_piks(frames: Sequence[DemoFrame]) -> list[int]:
    """Indices where the contact pair (phi, psi) changes."""
    if len(frames) < 2:
        raise ValueError("need at least 2 frames")
    piks = []
    for i in range(1, len(frames)):
        if (frames[i].phi, frames[i].psi) != (frames[i - 1].phi,
                                              frames[i - 1].psi):
            piks.append(i)
    return piks


def _relative_trajectory(frames: Sequence[DemoFrame], start: int, end: int,
                         object_id: str) -> Trajectory:
    samples = []
    for i in range(start, end):
        f = frames[i]
        obj = f.object_poses[object_id]
        rel_pos = f.hand_pose.position - obj.position
        rel_rpy = [normalize_angle(h - o)
                   for h, o in zip(f.hand_pose.rpy, obj.rpy)]
        samples.append((f.time, Pose(rel_pos, rel_rpy)))
    if len(samples) == 1:  # single-frame segment: duplicate to keep the type
        t, p = samples[0]
        samples.append((t + 1e-6, p))
    return Trajectory(samples)


def _majority_nearest(frames: Sequence[DemoFrame], start: int, end: int) -> str:
    counts: dict[str, int] = {}
    for i in range(start, end):
        counts[frames[i].nearest_object_id] = \
            counts.get(frames[i].nearest_object_id, 0) + 1
    return max(sorted(counts), key=counts.get)


def extract_segment(frames: Sequence[DemoFrame], frame_range: tuple[int, int],
                    objects: dict[str, ObjectMeta],
                    next_interacting: str | None = None) -> Segment:
    """Build the feature tuple for one PIK-delimited frame range.

    When the hand/tool is out of contact the relative trajectory is taken
    against the object of the *following* segment; the last segment falls
    back to the nearest object and is flagged.
    """
    start, end = frame_range
    if not (0 <= start < end <= len(frames)):
        raise ValueError(f"invalid frame range {frame_range}")
    phi = frames[start].phi
    psi = frames[start].psi
    fallback = False
    if psi == 1:
        interacting = _majority_nearest(frames, start, end)
    elif next_interacting is not None:
        interacting = next_interacting
    else:
        interacting = frames[end - 1].nearest_object_id
        fallback = True
    if interacting not in objects:
        raise ValueError(f"object {interacting!r} missing from object table")

    rel = _relative_trajectory(frames, start, end, interacting)
    duration = float(rel.times[-1] - rel.times[0])
    if duration <= 0:
        duration = 1e-9
    d0 = float(np.linalg.norm(rel.poses[0].position))
    d1 = float(np.linalg.norm(rel.poses[-1].position))
    u_dx = step_indicator((d1 - d0) / duration)

    hand_positions = np.stack([frames[i].hand_pose.position
                               for i in range(start, end)])
    path_len = float(np.sum(np.linalg.norm(np.diff(hand_positions, axis=0),
                                           axis=1))) if end - start > 1 else 0.0
    mean_speed = path_len / duration
    u_dy = step_indicator(mean_speed - V_EPS)

    rpys = np.stack([frames[i].hand_pose.rpy for i in range(start, end)])
    ang_len = 0.0
    if end - start > 1:
        diffs = np.diff(rpys, axis=0)
        diffs = np.vectorize(normalize_angle)(diffs)
        ang_len = float(np.sum(np.abs(diffs)))
    rotation_dominant = ang_len > (path_len / ROTATION_LENGTH_SCALE)

    return Segment(start=start, end=end, phi=phi, psi=psi,
                   relative_trajectory=rel, u_dx=u_dx, u_dy=u_dy,
                   interacting_object_id=interacting,
                   rotation_dominant=rotation_dominant,
                   used_nearest_fallback=fallback)


def segment_demo(frames: Sequence[DemoFrame],
                 objects: dict[str, ObjectMeta]) -> list[Segment]:
    """Partition the demo at its PIKs and extract every segment's features."""
    piks = detect_piks(frames)
    boundaries = [0] + piks + [len(frames)]
    ranges = list(zip(boundaries, boundaries[1:]))
    # resolve out-of-contact segments against the next segment's object, so
    # walk backwards
    segments: list[Segment | None] = [None] * len(ranges)
    next_obj: str | None = None
    for idx in range(len(ranges) - 1, -1, -1):
        seg = extract_segment(frames, ranges[idx], objects, next_obj)
        segments[idx] = seg
        next_obj = seg.interacting_object_id
    return list(segments)


# --------------------------------------------------------------------------
# classification: fixed rule tree (v1), total over the feature domain
# --------------------------------------------------------------------------


def classify_segment(segment: Segment, prev_class: SkillClass | None,
                     objects: dict[str, ObjectMeta]) -> SkillClass:
    """Deterministic rule tree over (phi, psi, u_dy, u_dx, rotation
    dominance, interacting-object class, previous class).

    Rules, in priority order:

    phi = 0 (free hand):
        stationary            -> guarded_move
        rotation dominant     -> visual_servo
        closing (u_dx = 0)    -> approach
        separating            -> retract
    phi = 1, psi = 1 (held object in contact):
        granular-bed:   moving -> scoop, else move_with_contact
        goal-container: rotation dominant -> unscoop, else move_with_contact
        other:          moving -> move_with_contact, else move_to_contact
    phi = 1, psi = 0 (carrying free):
        rotation dominant: goal-container -> unscoop, else guarded_move
        stationary: after approach -> grasp, else guarded_move
        after scoop           -> lift
        after lift/transport, closing -> transport
        closing (u_dx = 0)    -> approach
        separating            -> retract
    """
    obj_cls = objects[segment.interacting_object_id].cls
    if segment.phi == 0:
        if segment.u_dy == 0:
            return SkillClass.GUARDED_MOVE
        if segment.rotation_dominant:
            return SkillClass.VISUAL_SERVO
        return SkillClass.APPROACH if segment.u_dx == 0 else SkillClass.RETRACT
    if segment.psi == 1:
        if obj_cls == "granular-bed":
            return SkillClass.SCOOP if segment.u_dy == 1 \
                else SkillClass.MOVE_WITH_CONTACT
        if obj_cls == "goal-container":
            return SkillClass.UNSCOOP if segment.rotation_dominant \
                else SkillClass.MOVE_WITH_CONTACT
        return SkillClass.MOVE_WITH_CONTACT if segment.u_dy == 1 \
            else SkillClass.MOVE_TO_CONTACT
    # phi = 1, psi = 0
    if segment.rotation_dominant:
        return SkillClass.UNSCOOP if obj_cls == "goal-container" \
            else SkillClass.GUARDED_MOVE
    if segment.u_dy == 0:
        return SkillClass.GRASP if prev_class == SkillClass.APPROACH \
            else SkillClass.GUARDED_MOVE
    if prev_class == SkillClass.SCOOP:
        return SkillClass.LIFT
    if prev_class in (SkillClass.LIFT, SkillClass.TRANSPORT) \
            and segment.u_dx == 0:
        return SkillClass.TRANSPORT
    return SkillClass.APPROACH if segment.u_dx == 0 else SkillClass.RETRACT


_END_STATE = {
    SkillClass.SCOOP: "scooped-from",
    SkillClass.UNSCOOP: "filled",
    SkillClass.GRASP: "held",
}


def _goal_state_for(skill: SkillClass, obj: ObjectMeta) -> str:
    state = _END_STATE.get(skill)
    if state and state in obj.states:
        return state
    return obj.states[0] if obj.states else "unchanged"


# --------------------------------------------------------------------------
# policy assembly with transition-skill insertion
# --------------------------------------------------------------------------


def _max_tip_down_tilt(segment: Segment, frames: Sequence[DemoFrame]) -> float:
    pitches = [frames[i].hand_pose.pitch for i in range(segment.start,
                                                        segment.end)]
    return max(0.0, -min(pitches))


def insert_transition_skills(steps: list[SkillStep],
                             objects: dict[str, ObjectMeta]) -> list[SkillStep]:
    """Insert connectors where a skill's entry condition is not established
    by its predecessor: move_to_contact before scoop, transport (move to
    goal) before unscoop.  The first step never needs a connector; running
    the pass on its own output inserts nothing."""
    result: list[SkillStep] = []
    for step in steps:
        prev = result[-1] if result else None
        entry_pose = step.world_start_pose or step.goal_pose
        if step.skill == SkillClass.SCOOP and prev is not None \
                and prev.skill not in ESTABLISHES_CONTACT:
            result.append(SkillStep(
                skill=SkillClass.MOVE_TO_CONTACT,
                goal_state="in-contact",
                goal_pose=entry_pose,
                inserted=True))
        if step.skill == SkillClass.UNSCOOP and prev is not None \
                and not _establishes_at_goal(prev, objects):
            result.append(SkillStep(
                skill=SkillClass.TRANSPORT,
                goal_state="at-goal-container",
                goal_pose=entry_pose,
                inserted=True))
        result.append(step)
    return result


def _establishes_at_goal(prev: SkillStep, objects: dict[str, ObjectMeta]) -> bool:
    if prev.skill in ESTABLISHES_AT_GOAL:
        return True
    if prev.skill == SkillClass.APPROACH and prev.segment is not None:
        target = objects.get(prev.segment.interacting_object_id)
        return target is not None and target.cls == "goal-container"
    return False


def infer_policy(frames: Sequence[DemoFrame],
                 objects: dict[str, ObjectMeta]) -> Policy:
    """Segment, classify and assemble the executable skill sequence."""
    segments = segment_demo(frames, objects)
    if not segments:
        raise ValueError("demonstration produced no segments")
    steps: list[SkillStep] = []
    prev_class: SkillClass | None = None
    for seg in segments:
        skill = classify_segment(seg, prev_class, objects)
        obj = objects[seg.interacting_object_id]
        step = SkillStep(skill=skill, goal_state=_goal_state_for(skill, obj),
                         goal_pose=frames[seg.end - 1].hand_pose, segment=seg,
                         world_start_pose=frames[seg.start].hand_pose)
        if skill == SkillClass.UNSCOOP:
            step.max_tilt = _max_tip_down_tilt(seg, frames)
        steps.append(step)
        prev_class = skill
    return Policy(insert_transition_skills(steps, objects))


# --------------------------------------------------------------------------
# synthetic demonstration generator (stands in for RGB-D capture)
# --------------------------------------------------------------------------


@dataclass
class DemoScript:
    """Kinematic script for a scripted scooping demonstration."""

    entry_x: float = 0.30
    exit_x: float = 0.50
    sweep_depth: float = 0.05           # peak blade-center depth, m
    entry_depth: float = 0.015          # depth at grasp/entry, m
    entry_pitch: float = -0.55          # blade perpendicular-ish: high drag
    exit_pitch: float = -0.15
    carry_height: float = 0.25          # z during transport, m
    pour_tilt: float = math.radians(50.0)
    frame_rate: float = 30.0
    approach_duration: float = 1.0
    scoop_duration: float = 1.2
    lift_duration: float = 1.2
    unscoop_duration: float = 1.0
    retract_duration: float = 0.8
    home_offset: tuple[float, float] = (-0.18, 0.14)  # from entry, m
    pose_noise_sigma: float = 0.0

    #: labels the script guarantees, one per contact segment
    GROUND_TRUTH = ("approach", "scoop", "lift", "unscoop", "retract")


def _smoothstep(u: float) -> float:
    return u * u * (3.0 - 2.0 * u)


def generate_demo(sim: SimParams, script: DemoScript | None = None,
                  seed: int = 0):
    """Produce (frames, objects, ground_truth_labels) for a scripted demo.

    The script sweeps the scoop through the bed along a sinusoidal depth
    profile, carries it above the goal container, pours by tilting, and
    retracts.  Contact flags are script truth; the labels are the
    segmentation/classification oracle.
    """
    script = script or DemoScript()
    surface = sim.surface_height
    bed_lo = sim.bed_origin[0]
    bed_hi = sim.bed_origin[0] + sim.bed_size[0]
    if not (bed_lo <= script.entry_x < script.exit_x <= bed_hi):
        raise ValueError(
            f"scoop sweep [{script.entry_x}, {script.exit_x}] must lie inside "
            f"the bed [{bed_lo}, {bed_hi}]")
    if script.sweep_depth >= sim.fill_height:
        raise ValueError(
            f"sweep depth {script.sweep_depth} must stay above the bed floor "
            f"(fill height {sim.fill_height})")

    rng = np.random.default_rng(seed)
    bed_center = Pose((sim.bed_origin[0] + sim.bed_size[0] / 2.0, 0.0, surface))
    container = sim.goal_container_pose
    table = Pose((0.0, 0.0, 0.0))

    objects = {
        "scoop-1": ObjectMeta("scoop-1", "scoop-tool",
                              states=("free", "held")),
        "bed-1": ObjectMeta("bed-1", "granular-bed",
                            states=("full", "scooped-from")),
        "goal-1": ObjectMeta("goal-1", "goal-container",
                             states=("empty", "filled")),
        "table-1": ObjectMeta("table-1", "rigid-surface", states=("static",)),
    }

    grasp = Pose((script.entry_x, 0.0, surface - script.entry_depth),
                 (0.0, script.entry_pitch, 0.0))
    home = Pose((script.entry_x + script.home_offset[0], 0.0,
                 surface + script.home_offset[1]))
    pour_pose = Pose((container.position[0], 0.0,
                      float(container.position[2]) + 0.08))

    frames: list[DemoFrame] = []
    dt = 1.0 / script.frame_rate
    time = 0.0

    def emit(pose: Pose, phi: int, psi: int, held: str | None, nearest: str):
        nonlocal time
        if script.pose_noise_sigma > 0.0:
            noise = rng.normal(0.0, script.pose_noise_sigma, 3)
            pose = Pose(pose.position + noise, pose.rpy)
        tool_pose = pose if held else grasp
        frames.append(DemoFrame(
            time=round(time, 9), hand_pose=pose, phi=phi, psi=psi,
            held_object_id=held, nearest_object_id=nearest,
            object_poses={"scoop-1": tool_pose, "bed-1": bed_center,
                          "goal-1": container, "table-1": table}))
        time += dt

    def phase(duration: float, pose_fn, phi: int, psi: int,
              held: str | None, nearest: str):
        n = max(2, int(round(duration * script.frame_rate)))
        for i in range(n):
            emit(pose_fn(i / (n - 1)), phi, psi, held, nearest)

    # approach: free hand descends from home to the tool resting in the bed
    def approach_pose(u: float) -> Pose:
        s = _smoothstep(u)
        pos = home.position + s * (grasp.position - home.position)
        pitch = s * grasp.pitch
        return Pose(pos, (0.0, pitch, 0.0))

    phase(script.approach_duration, approach_pose, 0, 0, None, "bed-1")

    # scoop: grasped tool sweeps through the media (phi=1, psi=1)
    span = script.exit_x - script.entry_x

    def scoop_pose(u: float) -> Pose:
        x = script.entry_x + span * u
        depth = script.entry_depth + (script.sweep_depth - script.entry_depth) \
            * math.sin(math.pi * u)
        pitch = script.entry_pitch + (script.exit_pitch - script.entry_pitch) * u
        return Pose((x, 0.0, surface - depth), (0.0, pitch, 0.0))

    phase(script.scoop_duration, scoop_pose, 1, 1, "scoop-1", "bed-1")

    # lift & carry: out of the media, across to above the container
    lift_start = scoop_pose(1.0)

    def lift_pose(u: float) -> Pose:
        s = _smoothstep(u)
        # rise first, then translate: blend with a raised mid-height
        z = (1 - s) * float(lift_start.position[2]) \
            + s * float(pour_pose.position[2])
        z += math.sin(math.pi * s) * max(
            0.0, script.carry_height - max(float(lift_start.position[2]),
                                           float(pour_pose.position[2])))
        x = (1 - s) * float(lift_start.position[0]) \
            + s * float(pour_pose.position[0])
        pitch = (1 - s) * lift_start.pitch
        return Pose((x, 0.0, z), (0.0, pitch, 0.0))

    phase(script.lift_duration, lift_pose, 1, 0, "scoop-1", "goal-1")

    # unscoop: tilt down over the container and back (psi=1: pour contact)
    def unscoop_pose(u: float) -> Pose:
        pitch = -script.pour_tilt * math.sin(math.pi * u)
        return Pose(pour_pose.position, (0.0, pitch, 0.0))

    phase(script.unscoop_duration, unscoop_pose, 1, 1, "scoop-1", "goal-1")

    # retract: carry the tool back toward home (psi=0, separating)
    def retract_pose(u: float) -> Pose:
        s = _smoothstep(u)
        pos = pour_pose.position + s * (home.position - pour_pose.position)
        return Pose(pos, (0.0, 0.0, 0.0))

    phase(script.retract_duration, retract_pose, 1, 0, "scoop-1", "goal-1")

    return frames, objects, list(DemoScript.GROUND_TRUTH)


def random_script(sim: SimParams, rng: np.random.Generator) -> DemoScript:
    """Parameter-randomized script that keeps the ground-truth labeling."""
    bed_lo = sim.bed_origin[0]
    bed_hi = sim.bed_origin[0] + sim.bed_size[0]
    entry = rng.uniform(bed_lo + 0.02, bed_lo + 0.35 * (bed_hi - bed_lo))
    exit_x = rng.uniform(entry + 0.4 * (bed_hi - entry), bed_hi - 0.02)
    return DemoScript(
        entry_x=float(entry),
        exit_x=float(exit_x),
        sweep_depth=float(rng.uniform(0.03, 0.8 * sim.fill_height)),
        entry_depth=float(rng.uniform(0.008, 0.025)),
        entry_pitch=float(rng.uniform(-0.8, -0.35)),
        exit_pitch=float(rng.uniform(-0.25, 0.1)),
        carry_height=float(rng.uniform(0.22, 0.30)),
        pour_tilt=float(rng.uniform(math.radians(38), math.radians(80))),
        frame_rate=float(rng.choice([20.0, 30.0, 60.0])),
        approach_duration=float(rng.uniform(0.7, 1.4)),
        scoop_duration=float(rng.uniform(0.9, 1.6)),
        lift_duration=float(rng.uniform(0.9, 1.6)),
        unscoop_duration=float(rng.uniform(0.8, 1.3)),
        retract_duration=float(rng.uniform(0.6, 1.1)),
    )


# --------------------------------------------------------------------------
# demo file round-trip (line-delimited records, one frame per line)
# --------------------------------------------------------------------------


def _pose_to_list(p: Pose) -> list[float]:
    return [float(v) for v in p.as_tuple()]


def _pose_from_list(v: Sequence[float]) -> Pose:
    return Pose(v[:3], v[3:])


def write_demo(path: str | Path, frames: Sequence[DemoFrame],
               objects: dict[str, ObjectMeta],
               labels: Sequence[str] | None = None,
               meta: dict | None = None) -> None:
    header = {
        "type": "header",
        "objects": [
            {"id": o.id, "cls": o.cls,
             "grasp_orientation": _pose_to_list(o.grasp_orientation),
             "states": list(o.states)}
            for o in objects.values()
        ],
        "labels": list(labels) if labels else [],
        "meta": meta or {},
    }
    lines = [json.dumps(header, sort_keys=True)]
    for f in frames:
        lines.append(json.dumps({
            "type": "frame",
            "time": f.time,
            "hand_pose": _pose_to_list(f.hand_pose),
            "phi": f.phi,
            "psi": f.psi,
            "held_object_id": f.held_object_id,
            "nearest_object_id": f.nearest_object_id,
            "object_poses": {k: _pose_to_list(v)
                             for k, v in sorted(f.object_poses.items())},
        }, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def read_demo(path: str | Path):
    """Returns (frames, objects, labels, meta)."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"demo file {path} is empty")
    header = json.loads(lines[0])
    if header.get("type") != "header":
        raise ValueError(f"demo file {path} must start with a header record")
    objects = {}
    for o in header["objects"]:
        objects[o["id"]] = ObjectMeta(
            o["id"], o["cls"],
            grasp_orientation=_pose_from_list(o["grasp_orientation"]),
            states=tuple(o["states"]))
    frames = []
    for line in lines[1:]:
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("type") != "frame":
            raise ValueError(f"unexpected record type {rec.get('type')!r}")
        frames.append(DemoFrame(
            time=rec["time"],
            hand_pose=_pose_from_list(rec["hand_pose"]),
            phi=rec["phi"],
            psi=rec["psi"],
            held_object_id=rec["held_object_id"],
            nearest_object_id=rec["nearest_object_id"],
            object_poses={k: _pose_from_list(v)
                          for k, v in rec["object_poses"].items()},
        ))
    return frames, objects, header.get("labels", []), header.get("meta", {})
