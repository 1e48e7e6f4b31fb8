"""Least-effort path computation through the granular bed.

The path between two fixed endpoint poses is parametrized by interior
waypoints: horizontal progress is uniform, and each interior waypoint
carries two decision variables, blade pitch and depth below the free
surface.  Endpoints are fixed, so the boundary conditions hold identically
at every iterate and the constrained problem reduces to bound-constrained
minimization of the path work, solved by projected gradient descent with
an Armijo backtracking line search.  The optimizer is deterministic.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import MediaParams, PlannerParams, Pose, Trajectory, normalize_angle
from .media import BladeGeometry, path_work


def _normalize_bounds(bounds, m: int, name: str) -> np.ndarray:
    arr = np.asarray(bounds, dtype=float)
    if arr.shape == (2,):
        arr = np.tile(arr, (m, 1))
    if arr.shape != (m, 2):
        raise ValueError(f"{name} must be (lo, hi) or one pair per interior "
                         f"waypoint, got shape {arr.shape}")
    if np.any(arr[:, 0] > arr[:, 1]):
        raise ValueError(f"{name} contains an empty interval")
    return arr


@dataclass
class PathProblem:
    """Boundary poses plus the interior decision space."""

    start: Pose
    end: Pose
    n_waypoints: int
    pitch_bounds: Sequence[float] | np.ndarray = (-1.4, 0.7)
    depth_bounds: Sequence[float] | np.ndarray = (0.0, 0.08)

    def __post_init__(self):
        if self.n_waypoints < 3:
            raise ValueError("n_waypoints must be >= 3")
        if self.start.almost_equal(self.end):
            raise ValueError("start and end poses must differ")
        m = self.n_interior
        self.pitch_bounds = _normalize_bounds(self.pitch_bounds, m, "pitch_bounds")
        # negative depth means hovering above the free surface
        self.depth_bounds = _normalize_bounds(self.depth_bounds, m, "depth_bounds")

    @property
    def n_interior(self) -> int:
        return self.n_waypoints - 2

    def bounds_lo(self) -> np.ndarray:
        return np.concatenate([self.pitch_bounds[:, 0], self.depth_bounds[:, 0]])

    def bounds_hi(self) -> np.ndarray:
        return np.concatenate([self.pitch_bounds[:, 1], self.depth_bounds[:, 1]])

    def initial_decision(self, surface_height: float) -> np.ndarray:
        """Linear interpolation between the endpoint pitch/depth values."""
        m = self.n_interior
        ts = np.arange(1, m + 1) / (self.n_waypoints - 1)
        p0, p1 = self.start.pitch, self.end.pitch
        dpitch = normalize_angle(p1 - p0)
        pitches = p0 + ts * dpitch
        d0 = surface_height - float(self.start.position[2])
        d1 = surface_height - float(self.end.position[2])
        depths = d0 + ts * (d1 - d0)
        x = np.concatenate([pitches, depths])
        return np.clip(x, self.bounds_lo(), self.bounds_hi())

    def waypoints(self, decision: np.ndarray, surface_height: float) -> list[Pose]:
        """Waypoint poses for a decision vector (endpoints exact)."""
        m = self.n_interior
        decision = np.asarray(decision, dtype=float)
        if decision.shape != (2 * m,):
            raise ValueError(f"decision vector must have length {2 * m}")
        pitches = decision[:m]
        depths = decision[m:]
        ts = np.arange(1, m + 1) / (self.n_waypoints - 1)
        p0 = self.start.position
        p1 = self.end.position
        poses = [self.start]
        for t, pitch, depth in zip(ts, pitches, depths):
            xy = p0[:2] + t * (p1[:2] - p0[:2])
            z = surface_height - depth
            poses.append(Pose((xy[0], xy[1], z), (0.0, pitch, 0.0)))
        poses.append(self.end)
        return poses

    def build_trajectory(self, decision: np.ndarray, surface_height: float,
                         samples_per_segment: int = 4) -> Trajectory:
        """Fine-sampled trajectory through the waypoints (linear blend)."""
        return interpolate_waypoints(self.waypoints(decision, surface_height),
                                     samples_per_segment)


def interpolate_waypoints(poses: Sequence[Pose],
                          samples_per_segment: int) -> Trajectory:
    if samples_per_segment < 1:
        raise ValueError("samples_per_segment must be >= 1")
    samples: list[tuple[float, Pose]] = []
    t = 0.0
    for a, b in zip(poses, poses[1:]):
        dang = [normalize_angle(bb - aa) for aa, bb in zip(a.rpy, b.rpy)]
        for j in range(samples_per_segment):
            u = j / samples_per_segment
            pos = a.position + u * (b.position - a.position)
            rpy = [aa + u * d for aa, d in zip(a.rpy, dang)]
            samples.append((t, Pose(pos, rpy)))
            t += 1.0
    samples.append((t, poses[-1]))
    return Trajectory(samples)


@dataclass
class PlannedPath:
    trajectory: Trajectory
    work: float
    iterations: int
    converged: bool
    decision: np.ndarray = field(repr=False, default=None)
    problem: PathProblem = field(repr=False, default=None)
    history: list[tuple[int, float, float]] = field(default_factory=list,
                                                    repr=False)


def work_gradient(problem: PathProblem, decision: np.ndarray,
                  media: MediaParams, blade: BladeGeometry,
                  opts: PlannerParams | None = None) -> np.ndarray:
    """Central finite-difference gradient of path work, natural units."""
    opts = opts or PlannerParams()
    decision = np.asarray(decision, dtype=float)
    h = opts.fd_step
    grad = np.zeros_like(decision)

    def objective(x):
        traj = problem.build_trajectory(x, media.surface_height,
                                        opts.samples_per_segment)
        return path_work(traj, blade, media)

    for i in range(len(decision)):
        plus = decision.copy()
        minus = decision.copy()
        plus[i] += h
        minus[i] -= h
        grad[i] = (objective(plus) - objective(minus)) / (2.0 * h)
    return grad


def solve_least_effort(problem: PathProblem, media: MediaParams,
                       blade: BladeGeometry,
                       opts: PlannerParams | None = None) -> PlannedPath:
    """Minimize path work over the interior pitch/depth variables.

    Projected gradient descent from the linear-interpolation initializer;
    the objective sequence is non-increasing, so the solution never does
    worse than the initializer.
    """
    opts = opts or PlannerParams()
    lo, hi = problem.bounds_lo(), problem.bounds_hi()
    span = np.maximum(hi - lo, 1e-12)
    surface = media.surface_height

    def objective(x: np.ndarray) -> float:
        traj = problem.build_trajectory(x, surface, opts.samples_per_segment)
        w = path_work(traj, blade, media)
        if not math.isfinite(w):
            raise RuntimeError(
                f"non-finite path work {w!r} at decision {x!r}")
        return w

    x = problem.initial_decision(surface)
    work = objective(x)
    history: list[tuple[int, float, float]] = []
    converged = False
    step = 1.0
    iterations = 0

    for it in range(1, opts.max_iters + 1):
        iterations = it
        grad = work_gradient(problem, x, media, blade, opts)
        # scale by bound spans so pitch (rad) and depth (m) step comparably
        direction = grad * span
        grad_norm = float(np.linalg.norm(direction))
        history.append((it, work, grad_norm))
        if grad_norm < opts.tol:
            converged = True
            break
        improved = False
        t = step
        for _ in range(40):
            candidate = np.clip(x - t * direction * span, lo, hi)
            delta = candidate - x
            if np.max(np.abs(delta)) < 1e-15:
                break
            w_new = objective(candidate)
            if w_new <= work + opts.armijo_c * float(grad @ delta):
                x, prev_work, work = candidate, work, w_new
                step = t * 2.0
                improved = True
                break
            t *= opts.backtrack
        if not improved:
            converged = True
            break
        if prev_work - work < opts.tol:
            converged = True
            break

    trajectory = problem.build_trajectory(x, surface, opts.samples_per_segment)
    return PlannedPath(trajectory=trajectory, work=work, iterations=iterations,
                       converged=converged, decision=x, problem=problem,
                       history=history)


def export_plan_csv(plan: PlannedPath, path: str | Path,
                    header: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "z", "roll", "pitch", "yaw"])
        for t, pose in plan.trajectory:
            writer.writerow([t, *pose.as_tuple()])


def export_work_log(plan: PlannedPath, path: str | Path,
                    header: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "work", "grad_norm"])
        for row in plan.history:
            writer.writerow(list(row))
