"""Session-oriented HTTP interface for self-evaluation and live coaching.

Request/response JSON over HTTP with line-delimited streaming for episode
reports.  Every payload carries ``schema_version``; unknown fields are
ignored, unknown message types (routes) are rejected.  All mutations of one
session are serialized through a per-session lock: concurrent mutation
attempts are rejected with ``busy`` rather than queued.  Episode history is
a pure function of (config, seed, ordered message sequence), so replaying
the same messages reproduces identical logs.
"""

from __future__ import annotations

import itertools
import json
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse, StreamingResponse
from pydantic import BaseModel, ConfigDict

from .core import ConfigError, RunConfig
from .learn import ActionGrid, CoachInput, CoachSession, self_evaluate
from .pipeline import (
    demo_effort,
    infer_canonical_policy,
    make_coaching_world_factory,
    make_world,
    plan_scoop,
)

SCHEMA_VERSION = "1"


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class WireModel(BaseModel):
    """Envelope base: versioned, unknown fields ignored."""

    model_config = ConfigDict(extra="ignore")
    schema_version: str = SCHEMA_VERSION


class CreateSession(WireModel):
    seed: Optional[int] = None
    config: Optional[dict] = None      # RunConfig overrides, nested mapping
    run_selfeval: bool = False


class SubmitCoachInput(WireModel):
    goal_grams: float
    dof: str
    direction: str


class StepEpisode(WireModel):
    idempotency_token: Optional[str] = None


class RunEpisodes(WireModel):
    episodes: int = 30


class FeedbackUpdate(WireModel):
    goal_grams: float
    dof: str
    direction: str


class Session:
    """One live session: config, seed, learner state and episode history."""

    def __init__(self, session_id: str, config: RunConfig, seed: int):
        self.id = session_id
        self.config = config
        self.seed = seed
        self.phase = "idle"
        self.lock = threading.Lock()
        self.coach: CoachSession | None = None
        self.trajectory_snapshot: list[list[float]] | None = None
        self.selfeval_summary: dict | None = None
        self._idempotency: dict[str, dict] = {}

    # -- phases --------------------------------------------------------------

    def run_selfeval(self) -> None:
        self.phase = "selfeval"
        config = self.config
        frames, objects, labels, policy = infer_canonical_policy(config,
                                                                 self.seed)
        plan = plan_scoop(frames, policy, config)
        world = make_world(config)
        w_ref = demo_effort(frames, policy, config)
        grid = ActionGrid(config.planner.n_waypoints - 2)
        result = self_evaluate(plan, grid, world, config.selfeval, w_ref,
                               seed=self.seed,
                               samples_per_segment=config.planner.samples_per_segment)
        self.trajectory_snapshot = [
            [float(t), *pose.as_tuple()] for t, pose in result.trajectory]
        self.selfeval_summary = {
            "baseline_work_j": plan.work,
            "tuned_work_j": result.effort,
            "demo_work_j": w_ref,
            "offsets_rad": [float(o) for o in result.offsets],
            "episodes": len(result.episodes),
        }

    def submit_coach_input(self, goal_grams: float, dof: str,
                           direction: str) -> None:
        coach_input = CoachInput(goal_grams, dof, direction)
        factory = make_coaching_world_factory(self.config)
        if self.coach is None:
            self.coach = CoachSession(self.config, coach_input, factory,
                                      seed=self.seed)
        else:
            self.coach.set_input(coach_input)
        self.phase = "coaching"

    def step_episode(self, token: str | None = None) -> dict:
        if self.coach is None:
            raise ApiError(409, "precondition",
                           "no coach input: SubmitCoachInput first")
        if token is not None and token in self._idempotency:
            return self._idempotency[token]
        report = self.coach.step().to_dict()
        if token is not None:
            self._idempotency[token] = report
        return report

    def snapshot(self) -> dict:
        coach = self.coach
        bandit = coach.bandit if coach else None
        sim = self.config.sim
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": self.id,
            "phase": self.phase,
            "seed": self.seed,
            "config_hash": self.config.config_hash(),
            "coach_input": None if coach is None or coach.coach_input is None
            else {
                "goal_grams": coach.coach_input.goal_grams,
                "dof": coach.coach_input.dof,
                "direction": coach.coach_input.direction,
            },
            "episode_history": list(coach.history) if coach else [],
            "current_trajectory": self.trajectory_snapshot,
            "selfeval": self.selfeval_summary,
            "bandit": None if bandit is None else {
                "actions": [float(a) for a in bandit.actions],
                "estimates": [float(e) for e in bandit.estimates],
                "pulls": [int(p) for p in bandit.pulls],
                "epsilon": float(bandit.epsilon),
                "greedy_index": bandit.greedy_index(),
            },
            "world": {
                "surface_height": sim.surface_height,
                "bed_x": [sim.bed_origin[0],
                          sim.bed_origin[0] + sim.bed_size[0]],
                "container_x": sim.goal_container_x,
                "container_z": sim.goal_container_z,
                "container_radius": sim.goal_container_radius,
                "scoop_capacity_g": sim.scoop_capacity * 1000.0,
            },
        }


class SessionRegistry:
    def __init__(self, max_sessions: int = 8):
        self.max_sessions = max_sessions
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self._counter = itertools.count(1)

    def create(self, config: RunConfig, seed: int) -> Session:
        with self._lock:
            if len(self._sessions) >= self.max_sessions:
                raise ApiError(409, "busy",
                               f"session limit {self.max_sessions} reached")
            sid = f"s{next(self._counter):06d}"
            session = Session(sid, config, seed)
            self._sessions[sid] = session
            return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise ApiError(404, "not_found", f"unknown session {session_id!r}")
        return session


def _acquire(session: Session) -> threading.Lock:
    """Serialize session mutations; reject (not queue) concurrent attempts."""
    if not session.lock.acquire(blocking=False):
        raise ApiError(409, "busy", "session is processing another request")
    return session.lock


@contextmanager
def _locked(session: Session):
    lock = _acquire(session)
    try:
        yield
    finally:
        lock.release()


def create_app(base_config: RunConfig | None = None,
               max_sessions: int = 8,
               console_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="scoopsim service")
    registry = SessionRegistry(max_sessions)
    base = base_config or RunConfig()

    @app.exception_handler(ApiError)
    async def api_error_handler(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={
            "schema_version": SCHEMA_VERSION,
            "error": {"code": exc.code, "message": exc.message},
        })

    @app.exception_handler(ValueError)
    async def value_error_handler(request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={
            "schema_version": SCHEMA_VERSION,
            "error": {"code": "bad_input", "message": str(exc)},
        })

    @app.get("/healthz")
    def healthz():
        return {"schema_version": SCHEMA_VERSION, "status": "ok"}

    @app.post("/session")
    def create_session(msg: CreateSession):
        config = RunConfig.from_dict(base.to_dict())
        if msg.config:
            try:
                overrides = _merge(config.to_dict(), msg.config)
                config = RunConfig.from_dict(overrides)
            except ConfigError as exc:
                raise ApiError(400, "invalid_config", str(exc))
        try:
            config.validate()
        except ConfigError as exc:
            raise ApiError(400, "invalid_config", str(exc))
        seed = config.seed if msg.seed is None else int(msg.seed)
        session = registry.create(config, seed)
        if msg.run_selfeval:
            with _locked(session):
                session.run_selfeval()
        return {"schema_version": SCHEMA_VERSION, "session_id": session.id,
                "phase": session.phase}

    @app.post("/session/{session_id}/coach-input")
    def submit_coach_input(session_id: str, msg: SubmitCoachInput):
        session = registry.get(session_id)
        with _locked(session):
            session.submit_coach_input(msg.goal_grams, msg.dof, msg.direction)
        return {"schema_version": SCHEMA_VERSION, "phase": session.phase}

    @app.post("/session/{session_id}/step")
    def step_episode(session_id: str, msg: StepEpisode):
        session = registry.get(session_id)
        with _locked(session):
            report = session.step_episode(msg.idempotency_token)
        return {"schema_version": SCHEMA_VERSION, "report": report}

    @app.post("/session/{session_id}/run")
    def run_episodes(session_id: str, msg: RunEpisodes):
        session = registry.get(session_id)
        if session.coach is None:
            raise ApiError(409, "precondition",
                           "no coach input: SubmitCoachInput first")
        lock = _acquire(session)

        def stream() -> Iterator[str]:
            try:
                for _ in range(msg.episodes):
                    yield json.dumps(session.coach.step().to_dict(),
                                     sort_keys=True) + "\n"
            finally:
                lock.release()

        return StreamingResponse(stream(), media_type="application/x-ndjson")

    @app.get("/session/{session_id}/state")
    def get_state(session_id: str):
        return registry.get(session_id).snapshot()

    @app.post("/session/{session_id}/feedback")
    def feedback_update(session_id: str, msg: FeedbackUpdate):
        session = registry.get(session_id)
        if session.coach is None:
            raise ApiError(409, "precondition",
                           "no live coaching session to update")
        with _locked(session):
            session.submit_coach_input(msg.goal_grams, msg.dof, msg.direction)
        return {"schema_version": SCHEMA_VERSION, "phase": session.phase,
                "acknowledged": True}

    console = Path(console_dir) if console_dir else None
    if console and console.is_dir():
        @app.get("/")
        def index():
            return FileResponse(console / "index.html")

        @app.get("/console/{path:path}")
        def console_assets(path: str):
            target = (console / path).resolve()
            if not str(target).startswith(str(console.resolve())) \
                    or not target.is_file():
                raise ApiError(404, "not_found", f"no asset {path!r}")
            return FileResponse(target)

    return app


def _merge(dst: dict, src: dict) -> dict:
    out = dict(dst)
    for key, value in src.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out
