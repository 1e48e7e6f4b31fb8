"""Command-line pipeline: gen-demo, infer, plan, execute, selfeval, coach,
serve, report.

Every command honors --config/--seed, stamps its artifacts with a header
line carrying the config hash and seed, and writes plain-text artifacts
(JSON lines / CSV) so runs can be diffed byte-for-byte.  Exit codes:
0 success, 2 usage, 3 configuration, 4 runtime.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from .control import SkillClass, execute_policy
from .core import ConfigError, Pose, RunConfig, Trajectory, artifact_header
from .demo import (
    DemoScript,
    Policy,
    SkillStep,
    generate_demo,
    infer_policy,
    random_script,
    read_demo,
    write_demo,
)
from .learn import (
    ActionGrid,
    CoachInput,
    CoachSession,
    self_evaluate,
)
from .media import export_force_profile
from .pipeline import (
    bind_scoop_trajectory,
    demo_effort,
    make_coaching_world_factory,
    make_world,
    plan_scoop,
    scoop_problem_from_demo,
)
from .planner import PathProblem, PlannedPath, export_plan_csv, export_work_log, \
    solve_least_effort

EXIT_CONFIG = 3
EXIT_RUNTIME = 4


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig.load(path)


def _fail(code: int, kind: str, message: str):
    click.echo(f"error code={kind} msg={json.dumps(message)}", err=True)
    sys.exit(code)


def run_guarded(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, "config", str(exc))
    except (ValueError, RuntimeError, OSError) as exc:
        _fail(EXIT_RUNTIME, "runtime", str(exc))


config_option = click.option(
    "--config", "config_path", envvar="SCOOPSIM_CONFIG", default=None,
    type=click.Path(), help="YAML config file (built-in defaults if omitted).")
seed_option = click.option(
    "--seed", default=None, type=int,
    help="Override the config seed for this command.")


@click.group()
def main():
    """Granular-media scooping: demonstration inference, least-effort
    planning, self-evaluation RL and human-in-the-loop coaching."""


def _resolve(config_path, seed):
    config = _load_config(config_path)
    seed = config.seed if seed is None else seed
    return config, seed


# -- gen-demo ----------------------------------------------------------------


@main.command("gen-demo")
@config_option
@seed_option
@click.option("--out", required=True, type=click.Path())
@click.option("--randomize", is_flag=True,
              help="Randomize the script parameters (seeded).")
@click.option("--pose-noise", default=0.0, show_default=True,
              help="Gaussian pose noise sigma in meters.")
def gen_demo_cmd(config_path, seed, out, randomize, pose_noise):
    """Write a scripted scooping demonstration with ground-truth labels."""
    def run():
        config, seed_v = _resolve(config_path, seed)
        rng = np.random.default_rng(seed_v)
        script = random_script(config.sim, rng) if randomize else DemoScript()
        if pose_noise > 0.0:
            script.pose_noise_sigma = pose_noise
        frames, objects, labels = generate_demo(config.sim, script, seed_v)
        write_demo(out, frames, objects, labels, meta={
            "config_hash": config.config_hash(), "seed": seed_v})
        click.echo(f"wrote {len(frames)} frames, labels {labels} -> {out}")
    run_guarded(run)


# -- infer -------------------------------------------------------------------


def _pose_to_list(p: Pose) -> list[float]:
    return [float(v) for v in p.as_tuple()]


def policy_to_dict(policy: Policy) -> dict:
    steps = []
    for s in policy.steps:
        steps.append({
            "skill": s.skill.value,
            "goal_state": s.goal_state,
            "goal_pose": _pose_to_list(s.goal_pose),
            "start_pose": None if s.world_start_pose is None
            else _pose_to_list(s.world_start_pose),
            "inserted": s.inserted,
            "max_tilt": s.max_tilt,
        })
    return {"steps": steps}


def policy_from_dict(data: dict) -> Policy:
    steps = []
    for s in data["steps"]:
        steps.append(SkillStep(
            skill=SkillClass(s["skill"]),
            goal_state=s["goal_state"],
            goal_pose=Pose(s["goal_pose"][:3], s["goal_pose"][3:]),
            world_start_pose=None if s.get("start_pose") is None
            else Pose(s["start_pose"][:3], s["start_pose"][3:]),
            inserted=s["inserted"],
            max_tilt=s.get("max_tilt"),
        ))
    return Policy(steps)


@main.command("infer")
@config_option
@seed_option
@click.option("--demo", "demo_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
def infer_cmd(config_path, seed, demo_path, out):
    """Infer the skill policy from a demonstration file."""
    def run():
        config, seed_v = _resolve(config_path, seed)
        frames, objects, labels, meta = read_demo(demo_path)
        policy = infer_policy(frames, objects)
        doc = policy_to_dict(policy)
        doc["header"] = {"config_hash": config.config_hash(), "seed": seed_v}
        Path(out).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
        click.echo("policy: " + " -> ".join(policy.skill_names()))
    run_guarded(run)


# -- plan --------------------------------------------------------------------


@main.command("plan")
@config_option
@seed_option
@click.option("--demo", "demo_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path(),
              help="CSV path; a .json sidecar and _work.csv log are derived.")
def plan_cmd(config_path, seed, demo_path, out):
    """Solve the least-effort scoop path for the demonstrated segment."""
    def run():
        config, seed_v = _resolve(config_path, seed)
        frames, objects, labels, meta = read_demo(demo_path)
        policy = infer_policy(frames, objects)
        plan = plan_scoop(frames, policy, config)
        header = artifact_header(config, seed_v)
        export_plan_csv(plan, out, header=header)
        export_work_log(plan, _work_log_path(out), header=header)
        sidecar = {
            "header": {"config_hash": config.config_hash(), "seed": seed_v},
            "decision": [float(v) for v in plan.decision],
            "work_j": plan.work,
            "iterations": plan.iterations,
            "converged": plan.converged,
            "problem": {
                "start": _pose_to_list(plan.problem.start),
                "end": _pose_to_list(plan.problem.end),
                "n_waypoints": plan.problem.n_waypoints,
                "pitch_bounds": np.asarray(plan.problem.pitch_bounds).tolist(),
                "depth_bounds": np.asarray(plan.problem.depth_bounds).tolist(),
            },
        }
        Path(_sidecar_path(out)).write_text(
            json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
        click.echo(f"plan: work={plan.work:.4f} J in {plan.iterations} "
                   f"iterations (converged={plan.converged}) -> {out}")
    run_guarded(run)


def _sidecar_path(out: str) -> str:
    return str(Path(out).with_suffix(".json"))


def _work_log_path(out: str) -> str:
    p = Path(out)
    return str(p.with_name(p.stem + "_work.csv"))


def load_plan(path: str, config: RunConfig) -> PlannedPath:
    data = json.loads(Path(path).read_text())
    prob = data["problem"]
    problem = PathProblem(
        start=Pose(prob["start"][:3], prob["start"][3:]),
        end=Pose(prob["end"][:3], prob["end"][3:]),
        n_waypoints=prob["n_waypoints"],
        pitch_bounds=np.asarray(prob["pitch_bounds"]),
        depth_bounds=np.asarray(prob["depth_bounds"]),
    )
    decision = np.asarray(data["decision"], dtype=float)
    trajectory = problem.build_trajectory(
        decision, config.media.surface_height,
        config.planner.samples_per_segment)
    return PlannedPath(trajectory=trajectory, work=data["work_j"],
                       iterations=data["iterations"],
                       converged=data["converged"], decision=decision,
                       problem=problem)


# -- execute -----------------------------------------------------------------


@main.command("execute")
@config_option
@seed_option
@click.option("--policy", "policy_path", required=True, type=click.Path())
@click.option("--plan", "plan_path", required=True, type=click.Path(),
              help="The .json sidecar written by `plan`.")
@click.option("--out", required=True, type=click.Path())
def execute_cmd(config_path, seed, policy_path, plan_path, out):
    """Replay an inferred policy against the simulator."""
    def run():
        config, seed_v = _resolve(config_path, seed)
        policy = policy_from_dict(json.loads(Path(policy_path).read_text()))
        plan = load_plan(plan_path, config)
        bind_scoop_trajectory(policy, plan.trajectory)
        world = make_world(config)
        start = policy.steps[0].world_start_pose or plan.trajectory.start
        state = world.initial_state(start)
        outcomes = execute_policy(policy, world, state, config.control)
        lines = [artifact_header(config, seed_v)]
        for o in outcomes:
            for rec in o.trace:
                rec = dict(rec, skill=o.skill.value)
                lines.append(json.dumps(rec, sort_keys=True))
        Path(out).write_text("\n".join(lines) + "\n")
        summary = [{"skill": o.skill.value, "reached_goal": o.reached_goal,
                    "effort_j": o.effort, "halt_reason": o.halt_reason}
                   for o in outcomes]
        Path(_sidecar_path(out)).write_text(
            json.dumps({"outcomes": summary}, sort_keys=True, indent=2) + "\n")
        ok = all(o.reached_goal for o in outcomes)
        click.echo(f"executed {len(outcomes)}/{len(policy.steps)} skills, "
                   f"all goals reached: {ok}")
        if not ok:
            sys.exit(EXIT_RUNTIME)
    run_guarded(run)


# -- selfeval ----------------------------------------------------------------


@main.command("selfeval")
@config_option
@seed_option
@click.option("--demo", "demo_path", required=True, type=click.Path())
@click.option("--plan", "plan_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path(),
              help="Tuned trajectory CSV; log and sidecar paths derived.")
@click.option("--episodes", default=None, type=int,
              help="Override selfeval.max_episodes.")
def selfeval_cmd(config_path, seed, demo_path, plan_path, out, episodes):
    """Q-learning self-evaluation around the planned path."""
    def run():
        config, seed_v = _resolve(config_path, seed)
        if episodes is not None:
            config.selfeval.max_episodes = episodes
        frames, objects, labels, meta = read_demo(demo_path)
        policy = infer_policy(frames, objects)
        plan = load_plan(plan_path, config)
        world = make_world(config)
        w_ref = demo_effort(frames, policy, config)
        grid = ActionGrid(plan.problem.n_interior)
        result = self_evaluate(
            plan, grid, world, config.selfeval, w_ref, seed=seed_v,
            samples_per_segment=config.planner.samples_per_segment)
        header = artifact_header(config, seed_v)
        tuned = PlannedPath(trajectory=result.trajectory, work=result.effort,
                            iterations=len(result.episodes), converged=True,
                            decision=plan.decision, problem=plan.problem)
        export_plan_csv(tuned, out, header=header)
        log_path = Path(out).with_name(Path(out).stem + "_episodes.jsonl")
        lines = [header] + [json.dumps(e, sort_keys=True)
                            for e in result.episodes]
        log_path.write_text("\n".join(lines) + "\n")
        sidecar = {
            "header": {"config_hash": config.config_hash(), "seed": seed_v},
            "offsets_rad": [float(o) for o in result.offsets],
            "tuned_effort_j": result.effort,
            "baseline_effort_j": plan.work,
            "demo_effort_j": w_ref,
            "success": result.success,
            "fell_back_to_zero": result.fell_back_to_zero,
        }
        Path(_sidecar_path(out)).write_text(
            json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
        click.echo(f"selfeval: tuned effort {result.effort:.4f} J "
                   f"(baseline {plan.work:.4f} J, demo {w_ref:.4f} J)")
    run_guarded(run)


# -- coach -------------------------------------------------------------------


@main.command("coach")
@config_option
@seed_option
@click.option("--goal-grams", default=None, type=float)
@click.option("--dof", default=None,
              type=click.Choice(["x", "y", "z", "roll", "pitch", "yaw"]))
@click.option("--direction", default=None,
              type=click.Choice(["positive", "negative", "up", "down"]))
@click.option("--episodes", default=30, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path())
def coach_cmd(config_path, seed, goal_grams, dof, direction, episodes, out):
    """Run a coaching session (prompts for any missing coach input)."""
    def run():
        config, seed_v = _resolve(config_path, seed)
        goal = goal_grams if goal_grams is not None else click.prompt(
            "desired transfer quantity (grams)", type=float)
        dof_v = dof or click.prompt(
            "coached degree of freedom",
            type=click.Choice(["x", "y", "z", "roll", "pitch", "yaw"]))
        direction_v = direction or click.prompt(
            "direction", type=click.Choice(["positive", "negative",
                                            "up", "down"]))
        coach_input = CoachInput(goal, dof_v, direction_v)
        session = CoachSession(config, coach_input,
                               make_coaching_world_factory(config),
                               seed=seed_v)
        reports = session.run(episodes)
        lines = [artifact_header(config, seed_v)]
        lines += [json.dumps(e, sort_keys=True) for e in session.history]
        Path(out).write_text("\n".join(lines) + "\n")
        final = session.greedy_transfer_g()
        click.echo(f"coach: {episodes} episodes, greedy transfers "
                   f"{final:.1f} g toward goal {goal:.0f} g")
    run_guarded(run)


# -- serve -------------------------------------------------------------------


@main.command("serve")
@config_option
@seed_option
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8631, show_default=True, type=int)
@click.option("--max-sessions", default=8, show_default=True, type=int)
@click.option("--console-dir", default=None, type=click.Path(),
              help="Static console bundle to serve at /.")
def serve_cmd(config_path, seed, host, port, max_sessions, console_dir):
    """Serve the session HTTP API (and the console, if built)."""
    def run():
        import uvicorn

        from .service import create_app
        config, seed_v = _resolve(config_path, seed)
        config.seed = seed_v
        default_console = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        console = console_dir or (str(default_console)
                                  if default_console.is_dir() else None)
        app = create_app(config, max_sessions=max_sessions,
                         console_dir=console)
        uvicorn.run(app, host=host, port=port, log_level="warning")
    run_guarded(run)


# -- report ------------------------------------------------------------------


@main.command("report")
@config_option
@seed_option
@click.option("--plan-csv", default=None, type=click.Path())
@click.option("--coach-log", default=None, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
def report_cmd(config_path, seed, plan_csv, coach_log, out_dir):
    """Render CSV/JSONL logs into static plots (least-effort path shape and
    the coaching reward curve)."""
    def run():
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        config, _ = _resolve(config_path, seed)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        made = []
        if plan_csv:
            rows = _read_csv_rows(plan_csv)
            xs = [r["x"] for r in rows]
            zs = [r["z"] for r in rows]
            fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
            ax1.plot(xs, zs, "-o", ms=2.5, label="least-effort path")
            ax1.axhline(config.media.surface_height, ls="--", c="peru",
                        label="free surface")
            ax1.set_xlabel("x [m]")
            ax1.set_ylabel("z [m]")
            ax1.legend(fontsize=8)
            ax1.set_title("planned scoop path")
            work_rows = _read_csv_rows(_work_log_path(plan_csv))
            ax2.plot([r["iteration"] for r in work_rows],
                     [r["work"] for r in work_rows], "-")
            ax2.set_xlabel("iteration")
            ax2.set_ylabel("work [J]")
            ax2.set_title("solver progress")
            fig.tight_layout()
            path = out / "least_effort_path.png"
            fig.savefig(path, dpi=130)
            plt.close(fig)
            made.append(path)
        if coach_log:
            episodes = []
            for line in Path(coach_log).read_text().splitlines():
                if not line.startswith("#") and line.strip():
                    rec = json.loads(line)
                    if "episode" in rec:
                        episodes.append(rec)
            fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
            eps = [r["episode"] for r in episodes]
            ax1.plot(eps, [r["reward"] for r in episodes], "-o", ms=2.5)
            ax1.set_xlabel("episode")
            ax1.set_ylabel("reward")
            ax1.set_title("coaching rewards")
            ax2.plot(eps, [r["transferred_g"] for r in episodes], "-o", ms=2.5)
            ax2.set_xlabel("episode")
            ax2.set_ylabel("transferred [g]")
            ax2.set_title("transferred mass per episode")
            fig.tight_layout()
            path = out / "coaching_rewards.png"
            fig.savefig(path, dpi=130)
            plt.close(fig)
            made.append(path)
        if not made:
            raise ValueError("nothing to report: pass --plan-csv and/or "
                             "--coach-log")
        click.echo("wrote " + ", ".join(str(p) for p in made))
    run_guarded(run)


def _read_csv_rows(path: str) -> list[dict]:
    import csv as csvmod
    rows = []
    with open(path) as fh:
        lines = [l for l in fh if not l.startswith("#")]
    for row in csvmod.DictReader(lines):
        rows.append({k: float(v) for k, v in row.items()})
    return rows


if __name__ == "__main__":
    main()
