import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from scoopsim.core import (
    ConfigError,
    Pose,
    RunConfig,
    Trajectory,
    normalize_angle,
    step_indicator,
)


class TestNormalizeAngle:
    def test_identity(self):
        assert normalize_angle(0.0) == 0.0

    def test_periodicity(self):
        assert normalize_angle(2 * math.pi) == pytest.approx(0.0, abs=1e-12)

    def test_three_half_pi(self):
        # 3*pi/2 - 2*pi = -pi/2
        assert normalize_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)

    def test_pi_maps_to_pi(self):
        assert normalize_angle(math.pi) == pytest.approx(math.pi)
        assert normalize_angle(-math.pi) == pytest.approx(math.pi)

    def test_rejects_non_finite(self):
        for bad in (math.inf, -math.inf, math.nan):
            with pytest.raises(ValueError):
                normalize_angle(bad)

    @given(st.floats(-1e6, 1e6))
    def test_range_and_multiple_of_two_pi(self, theta):
        result = normalize_angle(theta)
        assert -math.pi < result <= math.pi
        k = (theta - result) / (2 * math.pi)
        assert abs(k - round(k)) < 1e-6

    @given(st.floats(-1e6, 1e6))
    def test_idempotent(self, theta):
        once = normalize_angle(theta)
        assert normalize_angle(once) == pytest.approx(once, abs=1e-12)


class TestStepIndicator:
    def test_zero_included(self):
        assert step_indicator(0.0) == 1

    def test_negative(self):
        assert step_indicator(-0.3) == 0

    def test_positive(self):
        assert step_indicator(5.2) == 1

    @given(st.floats(-1e9, 1e9))
    def test_sum_property(self, x):
        s = step_indicator(x) + step_indicator(-x)
        assert s >= 1
        assert (s == 2) == (x == 0)


class TestPose:
    def test_angles_normalized_on_construction(self):
        p = Pose((0, 0, 0), (3 * math.pi / 2, 0, -3 * math.pi))
        assert p.roll == pytest.approx(-math.pi / 2)
        assert p.yaw == pytest.approx(math.pi)

    def test_rejects_non_finite_position(self):
        with pytest.raises(ValueError):
            Pose((math.nan, 0, 0), (0, 0, 0))

    def test_error_to_normalizes_angles(self):
        a = Pose((0, 0, 0), (0, 3.0, 0))
        b = Pose((1, 0, 0), (0, -3.0, 0))
        err = a.error_to(b)
        assert err[0] == pytest.approx(1.0)
        # -3 - 3 = -6 wraps to 2*pi - 6
        assert err[4] == pytest.approx(2 * math.pi - 6.0)

    def test_immutable(self):
        p = Pose((1, 2, 3), (0, 0, 0))
        with pytest.raises(ValueError):
            p.position[0] = 9.0


class TestTrajectory:
    def test_requires_two_samples(self):
        with pytest.raises(ValueError):
            Trajectory([(0.0, Pose())])

    def test_requires_strictly_increasing_times(self):
        with pytest.raises(ValueError):
            Trajectory([(0.0, Pose()), (0.0, Pose((1, 0, 0)))])

    def test_reversed_preserves_geometry(self):
        traj = Trajectory([(0.0, Pose((0, 0, 0))), (1.0, Pose((1, 0, 0))),
                           (3.0, Pose((2, 0, 0)))])
        rev = traj.reversed()
        assert np.allclose(rev.positions(), traj.positions()[::-1])
        assert rev.times[0] == 0.0


class TestRunConfig:
    def test_defaults_validate(self):
        RunConfig().validate()

    def test_roundtrip_through_file(self, tmp_path):
        cfg = RunConfig()
        cfg.sim.scoop_capacity = 0.4
        path = tmp_path / "config.yaml"
        cfg.dump(path)
        loaded = RunConfig.load(path)
        assert loaded.sim.scoop_capacity == 0.4
        assert loaded.config_hash() == cfg.config_hash()

    def test_missing_file_names_path(self, tmp_path):
        missing = tmp_path / "nope.yaml"
        with pytest.raises(ConfigError, match="nope.yaml"):
            RunConfig.load(missing)

    def test_reward_constants_constraint_named(self):
        cfg = RunConfig()
        cfg.rl.c1 = 3.0
        cfg.rl.c2 = 2.0
        with pytest.raises(ConfigError, match="c2 > c1 > 0"):
            cfg.validate()

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("media:\n  bogus_key: 1.0\n")
        with pytest.raises(ConfigError, match="bogus_key"):
            RunConfig.load(path)

    def test_hash_changes_with_values(self):
        a = RunConfig()
        b = RunConfig()
        b.media.rho = 1000.0
        assert a.config_hash() != b.config_hash()
