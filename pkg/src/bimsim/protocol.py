"""Session engine behind the wire protocol and the HTTP service.

One request maps to exactly one response. Sessions wrap a world plus a
task; ``step`` applies an action, plays the scheduled motion to completion
(unless the server runs in slow-motion mode), checks the goal and the step
budget, and reports done/success. Terminal sessions reject further steps
and their state digest never changes.

Error responses carry a machine-readable code:

* ``E_REQUEST``  - malformed request envelope
* ``E_TASK``     - unknown task id
* ``E_SESSION``  - unknown session id
* ``E_ACTION``   - malformed or unknown action
* ``E_TERMINAL`` - step on a finished session
* ``E_RESPONSE_SIZE`` - response would exceed the configured bound
"""

from __future__ import annotations

import itertools
import json
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .contingency import Difficulty, OutcomeTable, load_outcome_table
from .exceptions import ArgumentError, IntegrityError, ProtocolError, SchemaError
from .features import position_index_grid
from .scene import WorldState, scene_from_dict, state_digest
from .tasks import Task, goal_satisfied, task_from_dict, task_to_dict
from .world import (
    ActionResult,
    ObservationFrame,
    VisibleObject,
    action_from_dict,
    apply_action,
    observe,
    run_ticks_to_completion,
    step_tick,
)

MAX_RESPONSE_BYTES = 1_000_000


# ---------------------------------------------------------------------------
# Configuration: scenes, tasks, outcome table
# ---------------------------------------------------------------------------


@dataclass
class SimulatorConfig:
    scenes: dict[str, dict]
    tasks: dict[str, Task]
    outcome_table: OutcomeTable
    slow_motion: bool = False
    max_response_bytes: int = MAX_RESPONSE_BYTES


def _packaged_dir(name: str):
    return resources.files("bimsim").joinpath(f"data/{name}")


def load_config(
    scenes_dir: Optional[str] = None,
    tasks_dir: Optional[str] = None,
    outcome_table_path: Optional[str] = None,
    slow_motion: bool = False,
) -> SimulatorConfig:
    """Assemble a config from directories, defaulting to packaged data."""
    scenes: dict[str, dict] = {}
    source = Path(scenes_dir) if scenes_dir else _packaged_dir("scenes")
    for entry in sorted(source.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".scene.json"):
            doc = json.loads(entry.read_text(encoding="utf-8"))
            scene_id = doc.get("name") or entry.name.replace(".scene.json", "")
            scenes[scene_id] = doc

    tasks: dict[str, Task] = {}
    source = Path(tasks_dir) if tasks_dir else _packaged_dir("tasks")
    for entry in sorted(source.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".task.json"):
            task = task_from_dict(json.loads(entry.read_text(encoding="utf-8")))
            if task.scene not in scenes:
                raise IntegrityError(
                    f"task {task.id!r} references unknown scene {task.scene!r}"
                )
            tasks[task.id] = task

    table = load_outcome_table(outcome_table_path)
    return SimulatorConfig(
        scenes=scenes, tasks=tasks, outcome_table=table, slow_motion=slow_motion
    )


# ---------------------------------------------------------------------------
# Observation payloads
# ---------------------------------------------------------------------------


def observation_payload(world: WorldState) -> dict:
    """Wire form of an observation, including per-token position triples."""
    frame = observe(world)
    height = len(frame.token_grid)
    width = len(frame.token_grid[0]) if height else 0
    robot = world.robot
    return {
        "token_grid": [list(row) for row in frame.token_grid],
        "position_index": position_index_grid(frame.tick, height, width, frame.robot_centroid),
        "robot_centroid": list(frame.robot_centroid),
        "crop_origin": list(frame.crop_origin),
        "visible_objects": [
            {
                "id": v.id,
                "category": v.category,
                "rel_pos": list(v.rel_pos),
                "cell": list(v.cell),
                "properties": list(v.properties),
                "state": list(v.state),
                "parent": v.parent,
                "held_by": v.held_by,
                "distance": v.distance,
                "position": list(v.position),
                "mass": v.mass,
            }
            for v in frame.visible_objects
        ],
        "proprio": list(frame.proprio),
        "tick": frame.tick,
        "robot": {
            "embodiment": robot.embodiment,
            "base": list(robot.base),
            "torso_lift": robot.torso_lift,
            "held": dict(robot.held),
            "end_effector": robot.end_effector,
        },
    }


def payload_to_frame(payload: dict) -> ObservationFrame:
    """Rebuild an ObservationFrame from its wire form (client-side use)."""
    return ObservationFrame(
        token_grid=tuple(tuple(int(t) for t in row) for row in payload["token_grid"]),
        robot_centroid=tuple(payload["robot_centroid"]),
        visible_objects=tuple(
            VisibleObject(
                id=v["id"],
                category=v["category"],
                rel_pos=tuple(v["rel_pos"]),
                cell=tuple(v["cell"]),
                properties=tuple(v["properties"]),
                state=tuple(v["state"]),
                parent=v.get("parent"),
                held_by=v.get("held_by"),
                distance=float(v["distance"]),
                position=tuple(v["position"]),
                mass=float(v["mass"]),
            )
            for v in payload["visible_objects"]
        ),
        proprio=tuple(float(x) for x in payload["proprio"]),
        tick=int(payload["tick"]),
        crop_origin=tuple(payload["crop_origin"]),
    )


# ---------------------------------------------------------------------------
# Sessions
# ---------------------------------------------------------------------------


@dataclass
class StepOutcome:
    result: ActionResult
    done: bool
    success: bool
    digest: str
    steps_used: int


@dataclass
class Session:
    id: str
    world: WorldState
    task: Task
    difficulty: Difficulty
    table: OutcomeTable
    auto_tick: bool = True
    steps_used: int = 0
    status: str = "active"  # active -> succeeded | failed
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @staticmethod
    def for_task(
        task: Task,
        scene_doc: dict,
        table: OutcomeTable,
        seed: Optional[int] = None,
        difficulty: Optional[Difficulty] = None,
        auto_tick: bool = True,
        session_id: str = "local",
        embodiment: Optional[str] = None,
    ) -> "Session":
        world = scene_from_dict(
            scene_doc, seed=seed, embodiment=embodiment, scene_id=task.scene
        )
        return Session(
            id=session_id,
            world=world,
            task=task,
            difficulty=difficulty or task.difficulty,
            table=table,
            auto_tick=auto_tick,
        )

    @staticmethod
    def create(
        config: SimulatorConfig,
        task_id: str,
        seed: Optional[int] = None,
        difficulty: Optional[Difficulty] = None,
        session_id: str = "local",
    ) -> "Session":
        if task_id not in config.tasks:
            raise ProtocolError("E_TASK", f"unknown task {task_id!r}")
        task = config.tasks[task_id]
        return Session.for_task(
            task,
            config.scenes[task.scene],
            config.outcome_table,
            seed=seed,
            difficulty=difficulty,
            auto_tick=not config.slow_motion,
            session_id=session_id,
        )

    def step(self, action) -> StepOutcome:
        """Apply one planner action; updates status and the step count."""
        if self.status != "active":
            raise ProtocolError("E_TERMINAL", f"session {self.id} is {self.status}")
        try:
            world, result = apply_action(self.world, action, self.difficulty, self.table)
        except ArgumentError as exc:
            raise ProtocolError("E_ACTION", str(exc)) from exc
        if self.auto_tick:
            world = run_ticks_to_completion(world)
        self.world = world
        self.steps_used += 1
        success = goal_satisfied(self.task, world, self.steps_used)
        done = success or self.steps_used >= self.task.step_budget
        if getattr(action, "kind", "") == "done":
            done = True
        if done:
            self.status = "succeeded" if success else "failed"
        return StepOutcome(
            result=result,
            done=done,
            success=success,
            digest=state_digest(world),
            steps_used=self.steps_used,
        )

    def tick(self) -> str:
        """Advance one tick (slow-motion mode); returns the new digest."""
        if self.status != "active":
            raise ProtocolError("E_TERMINAL", f"session {self.id} is {self.status}")
        self.world = step_tick(self.world)
        return state_digest(self.world)


class SessionRegistry:
    def __init__(self, config: SimulatorConfig):
        self.config = config
        self._sessions: dict[str, Session] = {}
        self._counter = itertools.count(1)
        self._lock = threading.Lock()

    def create(self, task_id: str, seed: Optional[int], difficulty: Optional[Difficulty]) -> Session:
        with self._lock:
            sid = f"s{next(self._counter):04d}"
        session = Session.create(self.config, task_id, seed, difficulty, session_id=sid)
        with self._lock:
            self._sessions[sid] = session
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise ProtocolError("E_SESSION", f"unknown session {session_id!r}")
        return session

    def close(self, session_id: str) -> None:
        with self._lock:
            if session_id not in self._sessions:
                raise ProtocolError("E_SESSION", f"unknown session {session_id!r}")
            del self._sessions[session_id]


# ---------------------------------------------------------------------------
# Message handling
# ---------------------------------------------------------------------------


def _error(code: str, message: str) -> dict:
    return {"ok": False, "error": {"code": code, "message": message}}


def handle_message(registry: SessionRegistry, msg: dict) -> dict:
    """Serve one request dict; never raises, always returns a response dict."""
    try:
        return _handle(registry, msg)
    except ProtocolError as exc:
        return _error(exc.code, str(exc))
    except (ArgumentError, SchemaError, IntegrityError) as exc:
        return _error("E_REQUEST", str(exc))


def _handle(registry: SessionRegistry, msg: dict) -> dict:
    if not isinstance(msg, dict) or "type" not in msg:
        return _error("E_REQUEST", "request must be an object with a 'type' field")
    kind = msg["type"]

    if kind == "info":
        return _bounded(registry, {
            "ok": True,
            "tasks": [task_to_dict(t) for _, t in sorted(registry.config.tasks.items())],
            "scenes": sorted(registry.config.scenes),
            "robots": ["h1", "x1"],
            "slow_motion": registry.config.slow_motion,
        })

    if kind == "reset":
        if "task" not in msg:
            return _error("E_REQUEST", "reset requires a 'task' field")
        difficulty = None
        if msg.get("difficulty") is not None:
            try:
                difficulty = Difficulty(msg["difficulty"])
            except ValueError:
                return _error("E_REQUEST", f"unknown difficulty {msg['difficulty']!r}")
        seed = msg.get("seed")
        if seed is not None and not isinstance(seed, int):
            return _error("E_REQUEST", "seed must be an integer")
        session = registry.create(msg["task"], seed, difficulty)
        with session.lock:
            return _bounded(registry, {
                "ok": True,
                "session": session.id,
                "task": task_to_dict(session.task),
                "difficulty": session.difficulty.value,
                "observation": observation_payload(session.world),
                "digest": state_digest(session.world),
            })

    if kind in ("step", "observe", "close", "tick"):
        session_id = msg.get("session")
        if not isinstance(session_id, str):
            return _error("E_REQUEST", f"{kind} requires a 'session' field")
        if kind == "close":
            registry.close(session_id)
            return {"ok": True, "session": session_id, "closed": True}
        session = registry.get(session_id)
        with session.lock:
            if kind == "observe":
                return _bounded(registry, {
                    "ok": True,
                    "session": session.id,
                    "observation": observation_payload(session.world),
                    "digest": state_digest(session.world),
                    "steps_used": session.steps_used,
                    "status": session.status,
                })
            if kind == "tick":
                digest = session.tick()
                return _bounded(registry, {
                    "ok": True,
                    "session": session.id,
                    "digest": digest,
                    "tick": session.world.tick,
                    "in_flight": session.world.in_flight is not None,
                })
            try:
                action = action_from_dict(msg.get("action"))
            except ArgumentError as exc:
                return _error("E_ACTION", str(exc))
            outcome = session.step(action)
            return _bounded(registry, {
                "ok": True,
                "session": session.id,
                "observation": observation_payload(session.world),
                "feedback": outcome.result.feedback,
                "result": {
                    "outcome": outcome.result.outcome.value,
                    "ticks_consumed": outcome.result.ticks_consumed,
                    "success": outcome.result.success,
                },
                "done": outcome.done,
                "success": outcome.success,
                "steps_used": outcome.steps_used,
                "digest": outcome.digest,
            })

    return _error("E_REQUEST", f"unknown request type {kind!r}")


def _bounded(registry: SessionRegistry, response: dict) -> dict:
    encoded = json.dumps(response, separators=(",", ":"))
    if len(encoded.encode("utf-8")) > registry.config.max_response_bytes:
        return _error("E_RESPONSE_SIZE", "response exceeds the configured size bound")
    return response
