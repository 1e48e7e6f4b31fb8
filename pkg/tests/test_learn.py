import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scoopsim.core import LearnParams, Pose, RunConfig
from scoopsim.learn import (
    ActionGrid,
    BanditState,
    CoachInput,
    CoachSession,
    QTable,
    build_action_set,
    coach_reward,
    coach_session_step,
    dof_bounds,
    enumerate_transfers,
    exhaustive_best_offsets,
    offset_trajectory,
    q_update,
    reward,
    run_scoop_episode,
    self_evaluate,
)
from scoopsim.pipeline import (
    infer_canonical_policy,
    make_coaching_world_factory,
    make_world,
    plan_scoop,
)


@pytest.fixture(scope="module")
def config():
    return RunConfig()


@pytest.fixture(scope="module")
def small_baseline(config):
    # 1 interior waypoint for the exact-enumeration tests
    cfg = RunConfig()
    cfg.planner.n_waypoints = 3
    frames, objects, labels, policy = infer_canonical_policy(cfg)
    plan = plan_scoop(frames, policy, cfg)
    return cfg, plan


class TestReward:
    params = LearnParams(c1=1.0, c2=2.0, beta=0.0)

    def test_success_branch(self):
        assert reward(True, 1.0, 1.0, self.params) == 1.0

    def test_failure_branch(self):
        assert reward(False, 1.0, 1.0, self.params) == -2.0

    def test_effort_shaping(self):
        shaped = LearnParams(c1=1.0, c2=2.0, beta=1.0)
        w_ref = 4.0
        assert reward(True, w_ref / 2, w_ref, shaped) == pytest.approx(1.5)

    def test_beta_zero_recovers_bare_formula(self):
        shaped = LearnParams(c1=1.0, c2=2.0, beta=0.0)
        assert reward(True, 0.123, 9.0, shaped) == 1.0

    def test_rejects_bad_reference(self):
        with pytest.raises(ValueError):
            reward(True, 1.0, 0.0, self.params)


class TestQUpdate:
    def test_zero_learning_rate_is_identity(self):
        params = LearnParams(alpha=1e-12)
        # alpha must be > 0 per the invariant; use the smallest legal value
        assert q_update(0.7, 5.0, 1.0, params) == pytest.approx(0.7, abs=1e-9)

    def test_hand_value(self):
        params = LearnParams(alpha=0.5, gamma=0.9)
        assert q_update(0.0, 1.0, 0.0, params) == 0.5

    def test_repeated_terminal_updates_converge_geometrically(self):
        params = LearnParams(alpha=0.5, gamma=0.9)
        q = 0.0
        r = 1.0
        gaps = []
        for _ in range(10):
            q = q_update(q, r, 0.0, params)
            gaps.append(abs(r - q))
        for a, b in zip(gaps, gaps[1:]):
            assert b / a == pytest.approx(1.0 - params.alpha, abs=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-2.0, 2.0), min_size=1, max_size=60))
    def test_bounded_from_zero_initialization(self, rewards):
        # |Q| never exceeds r_max / (1 - gamma) under any reward stream
        params = LearnParams(alpha=0.5, gamma=0.9, c1=1.0, c2=2.0, beta=1.0)
        bound = QTable(1, 1).bound(params)
        r_max = max(abs(params.c1) + abs(params.beta), abs(params.c2))
        q = 0.0
        max_next = 0.0
        for r in rewards:
            r = max(-r_max, min(r_max, r))
            q = q_update(q, r, max_next, params)
            max_next = abs(q)
            assert abs(q) <= bound + 1e-9


class TestActionGrid:
    def test_default_grid_symmetric(self):
        grid = ActionGrid(5)
        assert grid.n_actions == 5
        assert grid.offsets[grid.zero_index] == 0.0

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            ActionGrid(3, offsets=(0.0, 0.1))

    def test_zero_required(self):
        with pytest.raises(ValueError):
            ActionGrid(3, offsets=(-0.1, 0.1))


class TestOffsetTrajectory:
    def test_zero_offsets_reproduce_baseline_exactly(self, small_baseline):
        cfg, plan = small_baseline
        traj = offset_trajectory(plan, [0.0], cfg.media.surface_height,
                                 cfg.planner.samples_per_segment)
        assert np.array_equal(traj.positions(), plan.trajectory.positions())
        assert np.array_equal(traj.rpys(), plan.trajectory.rpys())

    def test_offsets_clip_to_pitch_bounds(self, small_baseline):
        cfg, plan = small_baseline
        traj = offset_trajectory(plan, [10.0], cfg.media.surface_height, 4)
        hi = plan.problem.pitch_bounds[0, 1]
        pitches = traj.rpys()[:, 1]
        assert np.max(pitches) <= hi + 1e-12


class TestSelfEvaluate:
    def test_single_waypoint_matches_enumeration(self, small_baseline):
        cfg, plan = small_baseline
        world = make_world(cfg)
        grid = ActionGrid(1)
        params = LearnParams(epsilon_decay=0.98, epsilon_min=0.02,
                             max_episodes=200)
        w_ref = plan.work * 2.0
        result = self_evaluate(plan, grid, world, params, w_ref, seed=3)
        best_offs, best = exhaustive_best_offsets(plan, grid, world)
        assert best is not None
        assert result.success
        assert result.effort == pytest.approx(best.effort, rel=1e-12)
        assert np.allclose(result.offsets, best_offs)

    def test_zero_only_grid_returns_baseline_exactly(self, small_baseline):
        cfg, plan = small_baseline
        world = make_world(cfg)
        grid = ActionGrid(1, offsets=(0.0,))
        params = LearnParams(max_episodes=5)
        result = self_evaluate(plan, grid, world, params, plan.work * 2,
                               seed=0)
        assert result.effort == plan.work

    def test_all_failure_falls_back_to_zero(self, small_baseline):
        cfg, plan = small_baseline
        strict = RunConfig()
        strict.planner.n_waypoints = 3
        strict.sim.scoop_goal_mass_min = 10.0  # impossible
        world = make_world(strict)
        grid = ActionGrid(1)
        params = LearnParams(max_episodes=20)
        result = self_evaluate(plan, grid, world, params, plan.work * 2,
                               seed=0)
        assert not result.any_success
        assert result.fell_back_to_zero
        assert np.allclose(result.offsets, 0.0)

    def test_learns_nonzero_offsets_on_suboptimal_baseline(self):
        # baseline = the unoptimized linear initializer: the learner must
        # discover pitch offsets that reduce drag, matching the 5^3
        # enumeration within 5%
        from scoopsim.media import path_work
        from scoopsim.pipeline import scoop_problem_from_demo
        from scoopsim.planner import PlannedPath

        cfg = RunConfig()
        cfg.planner.n_waypoints = 5
        frames, objects, labels, policy = infer_canonical_policy(cfg)
        problem = scoop_problem_from_demo(frames, policy, cfg)
        surface = cfg.media.surface_height
        x0 = problem.initial_decision(surface)
        world = make_world(cfg)
        traj0 = problem.build_trajectory(x0, surface, 4)
        w0 = path_work(traj0, world.blade, cfg.media)
        baseline = PlannedPath(trajectory=traj0, work=w0, iterations=0,
                               converged=False, decision=x0, problem=problem)
        grid = ActionGrid(3)
        params = LearnParams(epsilon_decay=0.995, epsilon_min=0.02,
                             max_episodes=500)
        result = self_evaluate(baseline, grid, world, params, w0 * 2.0, seed=1)
        best_offs, best = exhaustive_best_offsets(baseline, grid, world)
        assert result.effort < w0  # genuinely improved on the baseline
        assert np.any(result.offsets != 0.0)
        assert result.effort <= best.effort * 1.05

    def test_epsilon_schedule_monotone(self, small_baseline):
        cfg, plan = small_baseline
        world = make_world(cfg)
        params = LearnParams(max_episodes=60, epsilon_decay=0.9,
                             epsilon_min=0.1)
        result = self_evaluate(plan, ActionGrid(1), world, params,
                               plan.work * 2, seed=1)
        eps = [row["epsilon"] for row in result.episodes]
        assert all(b <= a for a, b in zip(eps, eps[1:]))
        assert min(eps) >= params.epsilon_min

    def test_deterministic(self, small_baseline):
        cfg, plan = small_baseline
        world = make_world(cfg)
        params = LearnParams(max_episodes=40)
        a = self_evaluate(plan, ActionGrid(1), world, params, plan.work * 2,
                          seed=9)
        b = self_evaluate(plan, ActionGrid(1), world, params, plan.work * 2,
                          seed=9)
        assert a.episodes == b.episodes
        assert np.array_equal(a.offsets, b.offsets)


class TestBuildActionSet:
    def test_pitch_down_grid_clipped(self, config):
        actions = build_action_set(CoachInput(100.0, "pitch", "down"),
                                   Pose((0.7, 0, 0.3)), dof_bounds(config))
        assert actions[0] == pytest.approx(-math.radians(5))
        assert actions[-1] == pytest.approx(-math.pi / 2)  # clipped at -90 deg
        assert len(actions) == 18  # -5..-90 in 5-degree steps
        diffs = np.diff(actions)
        assert np.all(diffs < 0)

    def test_up_from_upper_bound_rejected(self, config):
        start = Pose((0.7, 0, 0.3), (0.0, math.pi / 2, 0.0))
        with pytest.raises(ValueError, match="empty action set"):
            build_action_set(CoachInput(100.0, "pitch", "up"), start,
                             dof_bounds(config))

    def test_linear_grid_definition(self, config):
        actions = build_action_set(CoachInput(100.0, "z", "positive"),
                                   Pose((0.7, 0, 0.30)), dof_bounds(config))
        assert actions[0] == pytest.approx(0.31)
        assert actions[1] == pytest.approx(0.32)
        assert len(actions) == 19

    def test_direction_aliases(self):
        assert CoachInput(50.0, "pitch", "down").sign == -1.0
        assert CoachInput(50.0, "z", "up").sign == 1.0

    def test_invalid_dof_rejected(self):
        with pytest.raises(ValueError, match="dof"):
            CoachInput(100.0, "warp", "down")

    def test_non_positive_goal_rejected(self):
        with pytest.raises(ValueError):
            CoachInput(0.0, "pitch", "down")


class TestCoaching:
    def make_session(self, goal=100.0, seed=None):
        config = RunConfig()
        factory = make_coaching_world_factory(config)
        return CoachSession(config, CoachInput(goal, "pitch", "down"),
                            factory, seed=seed)

    def test_converges_within_30_episodes_to_10g(self):
        session = self.make_session(goal=100.0)
        session.run(30)
        assert abs(session.greedy_transfer_g() - 100.0) <= 10.0

    def test_exact_action_has_max_reward_and_wins(self):
        session = self.make_session(goal=100.0)
        reports = session.run(30)
        best = max(r.reward for r in reports)
        assert best == pytest.approx(1.0, abs=1e-4)
        greedy = session.bandit.greedy_index()
        # greedy action transfers 100 g: tilt -50 deg
        assert session.bandit.actions[greedy] == pytest.approx(
            -math.radians(50), abs=1e-9)

    def test_greedy_matches_bruteforce_after_full_sweep(self):
        session = self.make_session(goal=100.0)
        while not session.bandit.all_pulled:
            session.step()
        transfers = enumerate_transfers(session.bandit.actions,
                                        session.coach_input,
                                        session.world_factory)
        oracle = int(np.argmin([abs(t - 0.1) for t in transfers]))
        assert session.bandit.greedy_index() == oracle

    def test_feedback_update_retargets(self):
        session = self.make_session(goal=100.0)
        session.run(25)
        session.set_input(CoachInput(150.0, "pitch", "down"))
        assert session.history[-1]["marker"] == "feedback_update"
        session.run(25)
        assert abs(session.greedy_transfer_g() - 150.0) <= 10.0

    def test_identical_resubmission_is_noop(self):
        session = self.make_session(goal=100.0)
        session.run(5)
        n = len(session.history)
        session.set_input(CoachInput(100.0, "pitch", "down"))
        assert len(session.history) == n

    def test_epsilon_monotone_and_floored(self):
        session = self.make_session(goal=100.0)
        reports = session.run(40)
        eps = [r.epsilon for r in reports]
        assert all(b <= a + 1e-12 for a, b in zip(eps, eps[1:]))
        assert min(eps) >= session.params.epsilon_min - 1e-12

    def test_deterministic_for_fixed_seed(self):
        a = self.make_session(seed=5)
        b = self.make_session(seed=5)
        ra = [r.to_dict() for r in a.run(20)]
        rb = [r.to_dict() for r in b.run(20)]
        assert ra == rb

    def test_goal_above_capacity_rejected(self):
        with pytest.raises(ValueError, match="capacity"):
            self.make_session(goal=400.0)

    def test_coach_reward_clamped(self):
        assert coach_reward(0.0, 0.1) == 0.0
        assert coach_reward(0.1, 0.1) == 1.0
        assert coach_reward(0.5, 0.1) == -1.0
