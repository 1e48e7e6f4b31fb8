import math

import numpy as np
import pytest

from scoopsim.core import MediaParams, Pose, Trajectory, Twist
from scoopsim.media import (
    BladeGeometry,
    ElementArray,
    PlateElement,
    element_force,
    f_perp,
    intruder_force,
    path_work,
)


def make_params(**kw) -> MediaParams:
    base = dict(k=2.5, rho=2500.0, g=9.81, C=1.0, gamma0=math.pi / 6,
                grain_diameter=3e-4, surface_height=0.10)
    base.update(kw)
    return MediaParams(**base)


XHAT = np.array([1.0, 0.0, 0.0])
YHAT = np.array([0.0, 1.0, 0.0])
ZHAT = np.array([0.0, 0.0, 1.0])


class TestFPerp:
    def test_zero_at_zero(self):
        assert f_perp(0.0, make_params()) == 0.0

    def test_c_zero_is_identity(self):
        assert f_perp(1.0, make_params(C=0.0)) == pytest.approx(1.0)

    def test_hand_value(self):
        # (1 + 1/sqrt(tan(30deg)^2 + 1)) * 1 = 1 + sqrt(3)/2 = 1.8660254
        assert f_perp(1.0, make_params()) == pytest.approx(1.8660254, abs=1e-4)

    def test_odd(self):
        params = make_params()
        for x in np.linspace(0.0, 1.0, 21):
            assert f_perp(-x, params) == pytest.approx(-f_perp(x, params), abs=1e-15)

    def test_strictly_increasing_on_unit_interval(self):
        params = make_params()
        xs = np.linspace(0.0, 1.0, 200)
        ys = f_perp(xs, params)
        assert np.all(np.diff(ys) > 0)


def make_element(centroid=(0.0, 0.0, 0.05), normal=XHAT, tangent=ZHAT,
                 area=1e-4) -> PlateElement:
    return PlateElement(np.asarray(centroid, float), normal, tangent, area)


class TestPlateElement:
    def test_rejects_non_unit_normal(self):
        with pytest.raises(ValueError):
            PlateElement(np.zeros(3), 2 * XHAT, ZHAT, 1e-4)

    def test_rejects_non_orthogonal_frame(self):
        with pytest.raises(ValueError):
            PlateElement(np.zeros(3), XHAT, XHAT, 1e-4)

    def test_rejects_non_positive_area(self):
        with pytest.raises(ValueError):
            PlateElement(np.zeros(3), XHAT, ZHAT, 0.0)


class TestElementForce:
    def test_zero_at_surface(self):
        f = element_force(make_element(), XHAT, 0.0, make_params())
        assert np.allclose(f, 0.0)

    def test_zero_when_velocity_out_of_frame(self):
        # velocity perpendicular to both normal and tangent
        f = element_force(make_element(), YHAT, 0.05, make_params())
        assert np.allclose(f, 0.0, atol=1e-15)

    def test_hand_value_along_normal(self):
        # chain: 2 * k * rho * g * depth * f_perp(1) * area, opposing v = n
        params = make_params()
        depth, area = 0.05, 1e-4
        expected = 2.0 * 2.5 * 2500.0 * 9.81 * depth * (1 + math.sqrt(3) / 2) * area
        f = element_force(make_element(area=area), XHAT, depth, params)
        assert np.allclose(f, -expected * XHAT, rtol=1e-9)

    def test_rejects_non_unit_velocity(self):
        with pytest.raises(ValueError):
            element_force(make_element(), 2 * XHAT, 0.05, make_params())

    def test_dissipative_over_random_states(self):
        # force opposes motion for every element and direction
        rng = np.random.default_rng(42)
        params = make_params()
        for _ in range(1000):
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            t = np.cross(n, rng.normal(size=3))
            t /= np.linalg.norm(t)
            v = rng.normal(size=3)
            v /= np.linalg.norm(v)
            depth = rng.uniform(0.0, 0.2)
            el = PlateElement(np.array([0.0, 0.0, 0.1 - depth]), n, t,
                              rng.uniform(1e-6, 1e-3))
            f = element_force(el, v, depth, params)
            assert float(f @ v) <= 1e-12


class TestIntruderForce:
    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            intruder_force([], Twist(XHAT), make_params())

    def test_above_surface_contributes_nothing(self):
        els = [make_element(centroid=(0.0, 0.0, 0.2)),
               make_element(centroid=(0.1, 0.0, 0.15))]
        f, tau = intruder_force(els, Twist(XHAT), make_params())
        assert np.allclose(f, 0.0)
        assert np.allclose(tau, 0.0)

    def test_single_submerged_element_and_torque_lever(self):
        params = make_params()
        el = make_element(centroid=(0.2, 0.0, 0.05))
        ref = np.zeros(3)
        f, tau = intruder_force([el], Twist(XHAT), params, ref_point=ref)
        depth = params.surface_height - 0.05
        single = element_force(el, XHAT, depth, params)
        assert np.allclose(f, single, rtol=1e-12)
        assert np.allclose(tau, np.cross(el.centroid - ref, single), rtol=1e-12)

    def test_linear_in_rho(self):
        els = [make_element(centroid=(x, 0.0, 0.05)) for x in (0.0, 0.01, 0.02)]
        f1, _ = intruder_force(els, Twist(XHAT), make_params(rho=2500.0))
        f2, _ = intruder_force(els, Twist(XHAT), make_params(rho=5000.0))
        assert np.allclose(f2, 2.0 * f1, rtol=1e-9)

    def test_linear_in_k_and_depth(self):
        blade = BladeGeometry(0.1, 0.08, 8, 8)
        params = make_params()
        pose_shallow = Pose((0.0, 0.0, params.surface_height - 0.02))
        pose_deep = Pose((0.0, 0.0, params.surface_height - 0.04))
        arr_s = blade.elements_at(pose_shallow)
        arr_d = blade.elements_at(pose_deep)
        twist = Twist(XHAT)
        f_s, _ = intruder_force(arr_s, twist, params)
        f_d, _ = intruder_force(arr_d, twist, params)
        assert np.allclose(f_d, 2.0 * f_s, rtol=1e-9)
        f_k, _ = intruder_force(arr_s, twist, make_params(k=5.0))
        assert np.allclose(f_k, 2.0 * f_s, rtol=1e-9)


def straight_drag_trajectory(depth: float, length: float, n: int,
                             surface: float, pitch: float = 0.0) -> Trajectory:
    z = surface - depth
    xs = np.linspace(0.0, length, n)
    return Trajectory([(float(i), Pose((x, 0.0, z), (0.0, pitch, 0.0)))
                       for i, x in enumerate(xs)])


class TestPathWork:
    def test_above_surface_is_zero(self):
        params = make_params()
        blade = BladeGeometry(0.1, 0.08, 6, 6)
        traj = straight_drag_trajectory(-0.05, 0.3, 10, params.surface_height)
        assert path_work(traj, blade, params) == 0.0

    def test_constant_drag_closed_form(self):
        # horizontal blade dragged along its tangent at uniform depth:
        # every element sees v.n = 0, v.t = 1, so
        # W = 2 k rho g depth * area_total * length
        params = make_params()
        blade = BladeGeometry(0.1, 0.08, 10, 10)
        depth, length = 0.04, 0.3
        traj = straight_drag_trajectory(depth, length, 31, params.surface_height)
        expected = (2.0 * params.k * params.rho * params.g * depth
                    * (0.1 * 0.08) * length)
        assert path_work(traj, blade, params) == pytest.approx(expected, rel=1e-6)

    def test_riemann_refinement_converges(self):
        params = make_params()
        blade = BladeGeometry(0.1, 0.08, 8, 8)

        def arc(n):
            xs = np.linspace(0.0, 0.3, n)
            samples = []
            for i, x in enumerate(xs):
                z = params.surface_height - 0.05 * math.sin(math.pi * x / 0.3)
                pitch = -0.3 * math.sin(math.pi * x / 0.3)
                samples.append((float(i), Pose((x, 0.0, z), (0.0, pitch, 0.0))))
            return Trajectory(samples)

        w_n = path_work(arc(40), blade, params)
        w_2n = path_work(arc(80), blade, params)
        assert abs(w_2n - w_n) / w_n < 0.01

    def test_non_negative_over_random_paths(self):
        rng = np.random.default_rng(7)
        params = make_params()
        blade = BladeGeometry(0.1, 0.08, 5, 5)
        for _ in range(50):
            n = rng.integers(2, 8)
            samples = []
            for i in range(n):
                pos = rng.uniform([-0.1, -0.05, 0.0], [0.4, 0.05, 0.15])
                pitch = rng.uniform(-1.0, 1.0)
                samples.append((float(i), Pose(pos, (0.0, pitch, 0.0))))
            work = path_work(Trajectory(samples), blade, params)
            assert work >= -1e-12

    def test_reversed_path_same_work(self):
        params = make_params()
        blade = BladeGeometry(0.1, 0.08, 6, 6)
        rng = np.random.default_rng(3)
        samples = []
        for i in range(6):
            pos = rng.uniform([0.0, 0.0, 0.02], [0.3, 0.0, 0.12])
            samples.append((float(i), Pose(pos, (0.0, rng.uniform(-0.8, 0.8), 0.0))))
        traj = Trajectory(samples)
        w = path_work(traj, blade, params)
        w_rev = path_work(traj.reversed(), blade, params)
        assert w_rev == pytest.approx(w, rel=1e-12)

    def test_degenerate_segments_skipped(self):
        params = make_params()
        blade = BladeGeometry(0.1, 0.08, 5, 5)
        p = Pose((0.1, 0.0, 0.05))
        traj = Trajectory([(0.0, p), (1.0, p), (2.0, Pose((0.2, 0.0, 0.05)))])
        assert path_work(traj, blade, params) > 0.0


class TestBladeGeometry:
    def test_element_count_and_total_area(self):
        blade = BladeGeometry(0.1, 0.08, 11, 11)
        arr = blade.elements_at(Pose((0, 0, 0)))
        assert len(arr) == 121
        assert arr.areas.sum() == pytest.approx(0.1 * 0.08)

    def test_pitch_moves_tip_down_for_negative_pitch(self):
        blade = BladeGeometry(0.1, 0.08)
        tip_flat = blade.tip_position(Pose((0, 0, 0)))
        tip_dug = blade.tip_position(Pose((0, 0, 0), (0.0, -math.pi / 6, 0.0)))
        assert tip_flat[2] == pytest.approx(0.0, abs=1e-12)
        assert tip_dug[2] == pytest.approx(-0.05 * math.sin(math.pi / 6))

    def test_elements_roundtrip(self):
        blade = BladeGeometry(0.05, 0.04, 3, 3)
        arr = blade.elements_at(Pose((0.1, 0.0, 0.05), (0.0, -0.4, 0.0)))
        els = arr.to_elements()
        rebuilt = ElementArray.from_elements(els)
        assert np.allclose(rebuilt.centroids, arr.centroids)
        assert np.allclose(rebuilt.normals, arr.normals)
