"""Self-evaluation Q-learning and the coaching bandit.

Self-evaluation tunes per-waypoint blade-pitch offsets around the planned
least-effort path.  The observable task state is binary (did the scoop come
out loaded), but credit assignment needs structure, so episodes walk a
chain MDP: state = waypoint index, action = pitch offset at that waypoint,
with the binary-state reward issued at the terminal transition and shaped
by the realized effort.  Setting the shaping weight beta to zero recovers
the bare Kronecker-delta reward.

Coaching is a multi-armed bandit over a single coached degree of freedom.
The action set is an arithmetic grid stepping from the current pose in the
coached direction.  Value estimates are incremental means, initialized
optimistically at the reward ceiling so the greedy rule sweeps every
untried action once before settling; epsilon-greedy exploration with a
decaying schedule continues on top.  Both learners are deterministic for a
fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import LearnParams, Pose, RunConfig, Trajectory
from .media import path_work
from .planner import PlannedPath
from .sim import PoseIncrement, World, WorldState


def reward(success: bool, effort: float, effort_ref: float,
           params: LearnParams) -> float:
    """Terminal reward: delta * (c1 + beta * (w_ref - w) / w_ref) on success,
    -c2 otherwise.  beta = 0 reduces to the unshaped binary-state form."""
    if effort < 0:
        raise ValueError("effort must be non-negative")
    if effort_ref <= 0:
        raise ValueError("reference effort must be positive")
    if not success:
        return -params.c2
    shaped = params.beta * (effort_ref - effort) / effort_ref
    return params.c1 + shaped


def q_update(q: float, r: float, max_next: float, params: LearnParams) -> float:
    """One temporal-difference update; terminal transitions pass max_next=0."""
    return q + params.alpha * (r + params.gamma * max_next - q)


class QTable:
    """Dense table over (waypoint index, offset action) with visit counts."""

    def __init__(self, n_states: int, n_actions: int):
        self.values = np.zeros((n_states, n_actions))
        self.visits = np.zeros((n_states, n_actions), dtype=int)

    def max_action(self, state: int) -> int:
        return int(np.argmax(self.values[state]))

    def greedy_vector(self) -> np.ndarray:
        return np.argmax(self.values, axis=1)

    def bound(self, params: LearnParams) -> float:
        """Magnitude bound for any value reachable from zero initialization."""
        r_max = max(abs(params.c1) + abs(params.beta), abs(params.c2))
        return r_max / (1.0 - params.gamma)


@dataclass
class ActionGrid:
    """Waypoint count and the symmetric pitch-offset alphabet."""

    n_waypoints: int
    offsets: tuple[float, ...] = tuple(
        math.radians(d) for d in (-10.0, -5.0, 0.0, 5.0, 10.0))

    def __post_init__(self):
        if self.n_waypoints < 1:
            raise ValueError("need at least one waypoint")
        offs = tuple(float(o) for o in self.offsets)
        if not any(o == 0.0 for o in offs):
            raise ValueError("offset grid must contain 0")
        for o in offs:
            if -o not in offs:
                raise ValueError("offset grid must be symmetric about 0")
        self.offsets = offs

    @property
    def n_actions(self) -> int:
        return len(self.offsets)

    @property
    def zero_index(self) -> int:
        return self.offsets.index(0.0)


@dataclass
class EpisodeResult:
    success: bool
    mass: float
    effort: float


def offset_trajectory(baseline: PlannedPath, offsets: Sequence[float],
                      surface_height: float,
                      samples_per_segment: int) -> Trajectory:
    """Baseline decision with per-waypoint pitch offsets applied (clipped to
    the problem's pitch bounds).  All-zero offsets reproduce the baseline
    trajectory exactly."""
    problem = baseline.problem
    m = problem.n_interior
    offsets = np.asarray(offsets, dtype=float)
    if offsets.shape != (m,):
        raise ValueError(f"expected {m} offsets, got shape {offsets.shape}")
    decision = baseline.decision.copy()
    decision[:m] = np.clip(decision[:m] + offsets,
                           problem.pitch_bounds[:, 0],
                           problem.pitch_bounds[:, 1])
    return problem.build_trajectory(decision, surface_height,
                                    samples_per_segment)


def run_scoop_episode(world: World, trajectory: Trajectory) -> EpisodeResult:
    """Replay a scoop trajectory through the simulator.

    The effort is the path work of the replayed trajectory: the replay is an
    exact sample-by-sample pose playback, so this equals the work integral
    the planner optimizes.
    """
    poses = trajectory.poses
    state = world.initial_state(poses[0])
    for target in poses[1:]:
        state = world.step(state, PoseIncrement.between(state.scoop_pose,
                                                        target))
    effort = path_work(trajectory, world.blade, world.media)
    success = bool(state.mass_in_scoop >= world.sim.scoop_goal_mass_min)
    return EpisodeResult(success=success, mass=state.mass_in_scoop,
                         effort=effort)


@dataclass
class SelfEvalResult:
    trajectory: Trajectory
    qtable: QTable
    episodes: list[dict]
    offsets: np.ndarray
    effort: float
    mass: float
    success: bool
    any_success: bool
    fell_back_to_zero: bool


def self_evaluate(baseline: PlannedPath, grid: ActionGrid, world: World,
                  params: LearnParams, effort_ref: float,
                  seed: int = 0,
                  samples_per_segment: int = 4) -> SelfEvalResult:
    """Episodic chain-MDP Q-learning over pitch offsets along the baseline.

    Epsilon-greedy action selection with the decaying schedule; the terminal
    reward combines scoop success with effort shaping against the
    demonstration effort.  Returns the greedy trajectory after
    ``params.max_episodes`` episodes; if no episode ever succeeds the greedy
    choice falls back to zero offsets (the baseline itself).
    """
    if grid.n_waypoints != baseline.problem.n_interior:
        raise ValueError(
            f"grid has {grid.n_waypoints} waypoints but the baseline exposes "
            f"{baseline.problem.n_interior} interior waypoints")
    rng = np.random.default_rng(seed)
    q = QTable(grid.n_waypoints, grid.n_actions)
    surface = world.media.surface_height
    epsilon = params.epsilon0
    episodes: list[dict] = []
    any_success = False

    def evaluate(offset_idx: np.ndarray) -> EpisodeResult:
        offs = np.array([grid.offsets[i] for i in offset_idx])
        traj = offset_trajectory(baseline, offs, surface, samples_per_segment)
        return run_scoop_episode(world, traj)

    for episode in range(params.max_episodes):
        # one action per waypoint, epsilon-greedy
        chosen = np.empty(grid.n_waypoints, dtype=int)
        for s in range(grid.n_waypoints):
            if rng.random() < epsilon:
                chosen[s] = rng.integers(grid.n_actions)
            else:
                chosen[s] = q.max_action(s)
        result = evaluate(chosen)
        any_success = any_success or result.success
        r = reward(result.success, result.effort, effort_ref, params)
        # The shared terminal reward depends on the whole offset vector, so
        # it is not Markov in the waypoint index alone: a bootstrapped
        # max-over-next target cannot tell interior actions apart (the chain
        # advances regardless of the action).  Each visited pair is instead
        # updated toward its discounted Monte-Carlo return, gamma^d * r with
        # d the distance to the terminal; the terminal pair sees r itself.
        last = grid.n_waypoints - 1
        for s in range(last, -1, -1):
            discounted = (params.gamma ** (last - s)) * r
            q.values[s, chosen[s]] = q_update(
                q.values[s, chosen[s]], discounted, 0.0, params)
            q.visits[s, chosen[s]] += 1
        episodes.append({
            "episode": episode,
            "offsets_deg": [round(math.degrees(grid.offsets[i]), 4)
                            for i in chosen],
            "success": result.success,
            "mass_kg": round(result.mass, 9),
            "effort_j": round(result.effort, 9),
            "reward": round(r, 9),
            "epsilon": round(epsilon, 9),
        })
        epsilon = max(params.epsilon_min, epsilon * params.epsilon_decay)

    greedy_idx = q.greedy_vector()
    greedy_result = evaluate(greedy_idx)
    fell_back = False
    zero_idx = np.full(grid.n_waypoints, grid.zero_index)
    if not any_success or not greedy_result.success:
        greedy_idx = zero_idx
        greedy_result = evaluate(greedy_idx)
        fell_back = True
    else:
        zero_result = evaluate(zero_idx)
        if zero_result.success and zero_result.effort < greedy_result.effort:
            # the baseline itself is in the action set; never do worse
            greedy_idx = zero_idx
            greedy_result = zero_result
            fell_back = True

    offsets = np.array([grid.offsets[i] for i in greedy_idx])
    trajectory = offset_trajectory(baseline, offsets, surface,
                                   samples_per_segment)
    return SelfEvalResult(
        trajectory=trajectory, qtable=q, episodes=episodes, offsets=offsets,
        effort=greedy_result.effort, mass=greedy_result.mass,
        success=greedy_result.success, any_success=any_success,
        fell_back_to_zero=fell_back)


def exhaustive_best_offsets(baseline: PlannedPath, grid: ActionGrid,
                            world: World,
                            samples_per_segment: int = 4):
    """Brute-force oracle: enumerate every offset assignment, return the
    least-effort successful one as (offsets, EpisodeResult)."""
    import itertools
    surface = world.media.surface_height
    best = None
    best_offs = None
    for combo in itertools.product(range(grid.n_actions),
                                   repeat=grid.n_waypoints):
        offs = np.array([grid.offsets[i] for i in combo])
        traj = offset_trajectory(baseline, offs, surface, samples_per_segment)
        result = run_scoop_episode(world, traj)
        if not result.success:
            continue
        if best is None or result.effort < best.effort:
            best = result
            best_offs = offs
    return best_offs, best


# --------------------------------------------------------------------------
# coaching
# --------------------------------------------------------------------------

DOFS = ("x", "y", "z", "roll", "pitch", "yaw")
ANGULAR_DOFS = ("roll", "pitch", "yaw")
_DIRECTION_ALIASES = {
    "positive": 1.0, "up": 1.0, "+": 1.0,
    "negative": -1.0, "down": -1.0, "-": -1.0,
}

#: default action grid: 19 steps of 5 degrees (angular) or 1 cm (linear)
COACH_STEPS = 19
COACH_ANGULAR_STEP = math.radians(5.0)
COACH_LINEAR_STEP = 0.01


@dataclass(frozen=True)
class CoachInput:
    """Task goal plus the coached degree of freedom and direction."""

    goal_grams: float
    dof: str
    direction: str

    def __post_init__(self):
        if not self.goal_grams > 0:
            raise ValueError(f"goal must be positive, got {self.goal_grams} g")
        if self.dof not in DOFS:
            raise ValueError(f"dof must be one of {DOFS}, got {self.dof!r}")
        if self.direction not in _DIRECTION_ALIASES:
            raise ValueError(
                f"direction must be one of {sorted(_DIRECTION_ALIASES)}, "
                f"got {self.direction!r}")

    @property
    def sign(self) -> float:
        return _DIRECTION_ALIASES[self.direction]

    @property
    def goal_kg(self) -> float:
        return self.goal_grams / 1000.0


def dof_bounds(config: RunConfig) -> dict[str, tuple[float, float]]:
    sim = config.sim
    reach = sum(sim.link_lengths)
    return {
        "x": (sim.arm_base[0] - reach, sim.arm_base[0] + reach),
        "y": (-0.3, 0.3),
        "z": (0.0, sim.arm_base[2] + reach),
        "roll": (-math.pi, math.pi),
        "pitch": (-math.pi / 2, math.pi / 2),
        "yaw": (-math.pi, math.pi),
    }


def build_action_set(coach_input: CoachInput, start: Pose,
                     bounds: dict[str, tuple[float, float]]) -> list[float]:
    """Arithmetic action grid from the start pose's coached DOF value,
    stepping in the coached direction and clipped to the DOF bounds."""
    dof = coach_input.dof
    idx = DOFS.index(dof)
    start_value = start.as_tuple()[idx]
    step = COACH_ANGULAR_STEP if dof in ANGULAR_DOFS else COACH_LINEAR_STEP
    lo, hi = bounds[dof]
    values: list[float] = []
    for k in range(1, COACH_STEPS + 1):
        v = start_value + coach_input.sign * k * step
        v = min(max(v, lo), hi)
        if math.isclose(v, start_value, abs_tol=1e-12):
            continue  # clipped back onto the start: not an action
        if values and math.isclose(v, values[-1], abs_tol=1e-12):
            continue  # clipped onto the bound: keep it once
        values.append(v)
    if not values:
        raise ValueError(
            f"empty action set: {dof} cannot move {coach_input.direction} "
            f"from {start_value:.4f} within bounds [{lo:.4f}, {hi:.4f}]")
    return values


@dataclass
class BanditState:
    """Value estimates and schedule state for the coaching bandit."""

    actions: list[float]
    estimates: np.ndarray
    pulls: np.ndarray
    episode: int
    epsilon: float

    #: estimates start at the reward ceiling so greedy selection tries every
    #: action once before settling (optimistic initialization)
    OPTIMISTIC_VALUE = 1.0

    @classmethod
    def fresh(cls, actions: Sequence[float], params: LearnParams) -> "BanditState":
        n = len(actions)
        return cls(actions=list(actions),
                   estimates=np.full(n, cls.OPTIMISTIC_VALUE),
                   pulls=np.zeros(n, dtype=int),
                   episode=0,
                   epsilon=params.epsilon0)

    @property
    def all_pulled(self) -> bool:
        return bool(np.all(self.pulls > 0))

    def greedy_index(self) -> int:
        return int(np.argmax(self.estimates))

    def select(self, rng: np.random.Generator) -> int:
        explore = rng.random() < self.epsilon
        unpulled = np.flatnonzero(self.pulls == 0)
        if explore:
            return int(unpulled[0]) if unpulled.size else \
                int(rng.integers(len(self.actions)))
        return self.greedy_index()

    def update(self, index: int, r: float, params: LearnParams) -> None:
        self.pulls[index] += 1
        n = self.pulls[index]
        if n == 1:
            self.estimates[index] = r  # replaces the optimistic prior
        else:
            self.estimates[index] += (r - self.estimates[index]) / n
        self.episode += 1
        self.epsilon = max(params.epsilon_min,
                           self.epsilon * params.epsilon_decay)


def coach_reward(transferred_kg: float, goal_kg: float) -> float:
    r = 1.0 - abs(transferred_kg - goal_kg) / goal_kg
    return max(-1.0, min(1.0, r))


def run_unscoop_episode(world: World, state: WorldState,
                        coach_input: CoachInput, action_value: float,
                        k1: float = 0.2,
                        settle_tol: float = math.radians(0.2)) -> float:
    """Execute one coached unscoop: drive the coached DOF to the action
    value, pour, orient back.  Returns the transferred mass in kg as sensed
    by the wrist F/T mass estimate (exact at zero noise)."""
    est_before = world.estimate_scoop_mass(state)
    dof_idx = DOFS.index(coach_input.dof)

    def drive_to(target_vec: np.ndarray, tol: float, max_steps: int = 400):
        nonlocal state
        for _ in range(max_steps):
            current = np.array(state.scoop_pose.as_tuple())
            err = target_vec - current
            err[3:] = [math.remainder(e, 2 * math.pi) for e in err[3:]]
            if np.max(np.abs(err)) <= tol:
                break
            delta = k1 * err
            if np.max(np.abs(err)) <= tol / 0.5:
                delta = err  # deadbeat finish: land on the target exactly
            state = world.step(state, PoseIncrement(tuple(delta[:3]),
                                                    tuple(delta[3:])))

    target = np.array(state.scoop_pose.as_tuple())
    target[dof_idx] = action_value
    if coach_input.dof == "pitch":
        drive_to(target, settle_tol)
    else:
        drive_to(target, 1e-3)
        # pour at the carry tilt the demonstration used
        pour = np.array(state.scoop_pose.as_tuple())
        pour[4] = -(world.sim.hold_angle + world.sim.full_pour_angle) / 2.0
        drive_to(pour, settle_tol)
    # orient back to the carry pitch
    back = np.array(state.scoop_pose.as_tuple())
    back[4] = 0.0
    drive_to(back, math.radians(1.0))
    est_after = world.estimate_scoop_mass(state)
    return est_before - est_after


@dataclass
class CoachEpisodeReport:
    episode: int
    action_index: int
    action_value: float
    transferred_g: float
    reward: float
    epsilon: float
    greedy_index: int
    greedy_value: float

    def to_dict(self) -> dict:
        return {
            "episode": self.episode,
            "action_index": self.action_index,
            "action_value": round(self.action_value, 9),
            "transferred_g": round(self.transferred_g, 6),
            "reward": round(self.reward, 9),
            "epsilon": round(self.epsilon, 9),
            "greedy_index": self.greedy_index,
            "greedy_value": round(self.greedy_value, 9),
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def coach_session_step(state: BanditState, coach_input: CoachInput,
                       world_factory: Callable[[], tuple[World, WorldState]],
                       params: LearnParams,
                       rng: np.random.Generator) -> CoachEpisodeReport:
    """One coaching episode: select, execute, update, decay epsilon."""
    episode = state.episode
    epsilon_now = state.epsilon
    index = state.select(rng)
    world, world_state = world_factory()
    transferred = run_unscoop_episode(world, world_state, coach_input,
                                      state.actions[index])
    r = coach_reward(transferred, coach_input.goal_kg)
    state.update(index, r, params)
    greedy = state.greedy_index()
    return CoachEpisodeReport(
        episode=episode, action_index=index,
        action_value=state.actions[index],
        transferred_g=transferred * 1000.0, reward=r, epsilon=epsilon_now,
        greedy_index=greedy, greedy_value=state.actions[greedy])


def enumerate_transfers(actions: Sequence[float], coach_input: CoachInput,
                        world_factory) -> list[float]:
    """Oracle helper: transferred mass (kg) for every action, by direct
    enumeration on fresh worlds."""
    out = []
    for value in actions:
        world, state = world_factory()
        out.append(run_unscoop_episode(world, state, coach_input, value))
    return out


class CoachSession:
    """A live coaching run: bandit state, its RNG and the episode history."""

    def __init__(self, config: RunConfig, coach_input: CoachInput,
                 world_factory, seed: int | None = None):
        self.config = config
        self.params = config.rl
        self.world_factory = world_factory
        self.rng = np.random.default_rng(config.seed if seed is None else seed)
        self.history: list[dict] = []
        self.coach_input: CoachInput | None = None
        self.bandit: BanditState | None = None
        self.set_input(coach_input)

    def set_input(self, coach_input: CoachInput) -> None:
        """(Re)build the action set and reset value estimates; a marker in
        the history records the regime change."""
        capacity_g = self.config.sim.scoop_capacity * 1000.0
        if coach_input.goal_grams > capacity_g:
            raise ValueError(
                f"goal {coach_input.goal_grams} g exceeds the scoop capacity "
                f"{capacity_g:.0f} g")
        world, state = self.world_factory()
        actions = build_action_set(coach_input, state.scoop_pose,
                                   dof_bounds(self.config))
        same = (self.coach_input == coach_input
                and self.bandit is not None
                and list(self.bandit.actions) == actions)
        if same:
            return  # idempotent resubmission
        self.coach_input = coach_input
        self.bandit = BanditState.fresh(actions, self.params)
        if self.history:
            self.history.append({
                "marker": "feedback_update",
                "goal_grams": coach_input.goal_grams,
                "dof": coach_input.dof,
                "direction": coach_input.direction,
            })

    def step(self) -> CoachEpisodeReport:
        report = coach_session_step(self.bandit, self.coach_input,
                                    self.world_factory, self.params, self.rng)
        self.history.append(report.to_dict())
        return report

    def run(self, episodes: int) -> list[CoachEpisodeReport]:
        return [self.step() for _ in range(episodes)]

    def greedy_transfer_g(self) -> float:
        """Transferred grams for the current greedy action on a fresh world."""
        world, state = self.world_factory()
        kg = run_unscoop_episode(world, state, self.coach_input,
                                 self.bandit.actions[self.bandit.greedy_index()])
        return kg * 1000.0
