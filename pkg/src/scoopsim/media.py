"""Resistive force theory for granular media.

The reaction on a rigid intruder is integrated over discrete surface
elements.  Each submerged element at depth ``|z|`` below the free surface
contributes

    dF = -2 * k * rho * g * |z| * [f_perp(v.n) * n + (v.t) * t] * dA

where ``v`` is the unit direction of the element's motion, ``n``/``t`` the
element normal/tangent, and

    f_perp(x) = (1 + C / sqrt(tan(gamma0)^2 + x^2)) * x.

The leading minus makes the result the force *on the intruder*, so the
model is dissipative (F . v <= 0) by construction.  The model is
quasi-static and rate independent: only the direction of motion matters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import MediaParams, Pose, Trajectory, Twist


@dataclass(frozen=True)
class PlateElement:
    """One surface element of the intruder: centroid, unit frame, area."""

    centroid: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    area: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        t = np.asarray(self.tangent, dtype=float)
        c = np.asarray(self.centroid, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("element normal must be a unit vector")
        if abs(np.linalg.norm(t) - 1.0) > 1e-9:
            raise ValueError("element tangent must be a unit vector")
        if abs(float(n @ t)) > 1e-9:
            raise ValueError("element normal and tangent must be orthogonal")
        if not self.area > 0:
            raise ValueError("element area must be positive")
        object.__setattr__(self, "centroid", c)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "tangent", t)


def f_perp(vn: float | np.ndarray, params: MediaParams):
    """Normal-direction response factor, odd and increasing in vn."""
    tan2 = math.tan(params.gamma0) ** 2
    return (1.0 + params.C / np.sqrt(tan2 + np.square(vn))) * vn


def element_force(el: PlateElement, velocity_dir: np.ndarray, depth: float,
                  params: MediaParams) -> np.ndarray:
    """RFT force on the intruder from one element, N.

    ``depth`` is the element depth below the free surface; zero (at or above
    the surface) contributes nothing.
    """
    v = np.asarray(velocity_dir, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-6:
        raise ValueError("velocity_dir must be a unit vector")
    if depth <= 0.0:
        return np.zeros(3)
    vn = float(v @ el.normal)
    vt = float(v @ el.tangent)
    scale = 2.0 * params.k * params.rho * params.g * depth * el.area
    return -scale * (f_perp(vn, params) * el.normal + vt * el.tangent)


class ElementArray:
    """Columnar element storage for vectorized force evaluation."""

    def __init__(self, centroids: np.ndarray, normals: np.ndarray,
                 tangents: np.ndarray, areas: np.ndarray):
        self.centroids = centroids
        self.normals = normals
        self.tangents = tangents
        self.areas = areas

    def __len__(self) -> int:
        return len(self.areas)

    @classmethod
    def from_elements(cls, elements: Sequence[PlateElement]) -> "ElementArray":
        if not elements:
            raise ValueError("element list must be non-empty")
        return cls(
            np.stack([e.centroid for e in elements]),
            np.stack([e.normal for e in elements]),
            np.stack([e.tangent for e in elements]),
            np.array([e.area for e in elements]),
        )

    def to_elements(self) -> list[PlateElement]:
        return [PlateElement(c, n, t, float(a))
                for c, n, t, a in zip(self.centroids, self.normals,
                                      self.tangents, self.areas)]


def _force_torque(arr: ElementArray, velocities: np.ndarray,
                  params: MediaParams, ref_point: np.ndarray):
    """Vectorized per-element RFT sum given per-element velocities."""
    depths = np.maximum(0.0, params.surface_height - arr.centroids[:, 2])
    speeds = np.linalg.norm(velocities, axis=1)
    moving = speeds > 1e-12
    active = moving & (depths > 0.0)
    if not np.any(active):
        return np.zeros(3), np.zeros(3)
    v = velocities[active] / speeds[active, None]
    n = arr.normals[active]
    t = arr.tangents[active]
    vn = np.einsum("ij,ij->i", v, n)
    vt = np.einsum("ij,ij->i", v, t)
    scale = (2.0 * params.k * params.rho * params.g
             * depths[active] * arr.areas[active])
    forces = -scale[:, None] * (f_perp(vn, params)[:, None] * n + vt[:, None] * t)
    levers = arr.centroids[active] - ref_point
    torque = np.cross(levers, forces).sum(axis=0)
    return forces.sum(axis=0), torque


def intruder_force(elements: Sequence[PlateElement] | ElementArray,
                   body_twist: Twist, params: MediaParams,
                   ref_point: np.ndarray | None = None):
    """Total RFT (force, torque) on the intruder for a rigid-body twist.

    Per-element velocity is ``linear + angular x (centroid - ref_point)``;
    torque is accumulated about ``ref_point`` (defaults to the origin).
    Elements at or above the free surface contribute zero.
    """
    arr = elements if isinstance(elements, ElementArray) \
        else ElementArray.from_elements(elements)
    ref = np.zeros(3) if ref_point is None else np.asarray(ref_point, dtype=float)
    omega = body_twist.angular
    levers = arr.centroids - ref
    velocities = body_twist.linear + np.cross(np.broadcast_to(omega, levers.shape),
                                              levers)
    return _force_torque(arr, velocities, params, ref)


class BladeGeometry:
    """Flat rectangular scoop blade discretized into a uniform element grid.

    Body frame: length along +x, width along +y, outward normal +z.  A pose
    places the blade by its center; pitch rotates the length axis in the
    world x-z plane (positive pitch lifts the tip, negative digs it in).
    """

    def __init__(self, length: float, width: float,
                 nx: int = 11, ny: int = 11):
        if length <= 0 or width <= 0:
            raise ValueError("blade dimensions must be positive")
        if nx < 2 or ny < 2:
            raise ValueError("blade grid must be at least 2x2")
        self.length = length
        self.width = width
        self.nx = nx
        self.ny = ny
        # midpoint-rule grid in the body frame
        xs = (np.arange(nx) + 0.5) / nx * length - length / 2.0
        ys = (np.arange(ny) + 0.5) / ny * width - width / 2.0
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        self._body_points = np.column_stack(
            [gx.ravel(), gy.ravel(), np.zeros(nx * ny)])
        self._area = (length / nx) * (width / ny)

    def __len__(self) -> int:
        return self.nx * self.ny

    @staticmethod
    def _rotation(rpy: np.ndarray) -> np.ndarray:
        roll, pitch, yaw = rpy
        cr, sr = math.cos(roll), math.sin(roll)
        cp, sp = math.cos(pitch), math.sin(pitch)
        cy, sy = math.cos(yaw), math.sin(yaw)
        # planar pitch rotates +x toward +z
        rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
        ry = np.array([[cp, 0, -sp], [0, 1, 0], [sp, 0, cp]])
        rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
        return rz @ ry @ rx

    def elements_at(self, pose: Pose) -> ElementArray:
        rot = self._rotation(pose.rpy)
        centroids = self._body_points @ rot.T + pose.position
        n = len(self._body_points)
        normals = np.tile(rot[:, 2], (n, 1))
        tangents = np.tile(rot[:, 0], (n, 1))
        return ElementArray(centroids, normals, tangents,
                            np.full(n, self._area))

    def tip_position(self, pose: Pose) -> np.ndarray:
        rot = self._rotation(pose.rpy)
        return pose.position + rot[:, 0] * (self.length / 2.0)

    def drag_force(self, pose: Pose, direction: np.ndarray,
                   params: MediaParams) -> np.ndarray:
        """Translation-only RFT force on the blade at ``pose``, N."""
        d = np.asarray(direction, dtype=float)
        norm = np.linalg.norm(d)
        if norm < 1e-12:
            return np.zeros(3)
        arr = self.elements_at(pose)
        velocities = np.tile(d / norm, (len(arr), 1))
        force, _ = _force_torque(arr, velocities, params, pose.position)
        return force


def _midpoint_pose(a: Pose, b: Pose) -> Pose:
    from .core import normalize_angle
    dang = [normalize_angle(bb - aa) for aa, bb in zip(a.rpy, b.rpy)]
    return Pose((a.position + b.position) / 2.0,
                [aa + 0.5 * d for aa, d in zip(a.rpy, dang)])


def path_work(traj: Trajectory, geometry: BladeGeometry,
              params: MediaParams) -> float:
    """Work done against media resistance along a trajectory, J.

    Piecewise evaluation: each segment uses the midpoint pose and the
    segment displacement direction; zero-length segments are skipped.  The
    model is rate independent, so the result depends only on the path.
    """
    total = 0.0
    poses = traj.poses
    for a, b in zip(poses, poses[1:]):
        delta = b.position - a.position
        step = float(np.linalg.norm(delta))
        if step < 1e-15:
            continue
        mid = _midpoint_pose(a, b)
        force = geometry.drag_force(mid, delta / step, params)
        total += float(-force @ delta)
    return total


def export_force_profile(traj: Trajectory, geometry: BladeGeometry,
                         params: MediaParams, path: str | Path,
                         header: str | None = None) -> None:
    """Write per-sample pose, depth, drag force and cumulative work as CSV."""
    rows = []
    cumulative = 0.0
    poses = traj.poses
    for i, (t, pose) in enumerate(traj):
        if i + 1 < len(poses):
            delta = poses[i + 1].position - pose.position
        else:
            delta = pose.position - poses[i - 1].position
        step = float(np.linalg.norm(delta))
        force = geometry.drag_force(pose, delta / step, params) \
            if step > 1e-15 else np.zeros(3)
        if i > 0:
            seg = pose.position - poses[i - 1].position
            mid = _midpoint_pose(poses[i - 1], pose)
            seg_len = float(np.linalg.norm(seg))
            if seg_len > 1e-15:
                f_mid = geometry.drag_force(mid, seg / seg_len, params)
                cumulative += float(-f_mid @ seg)
        depth = max(0.0, params.surface_height - float(pose.position[2]))
        rows.append([t, *pose.as_tuple(), depth, *force, cumulative])
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "z", "roll", "pitch", "yaw",
                         "depth", "fx", "fy", "fz", "work"])
        writer.writerows(rows)
