"""Task definitions, goal checking, and failure classification.

Tasks fall into three categories: dual-arm essential (impossible for any
single-arm action sequence, e.g. a heavy lift), dual-arm optional (solvable
one-armed but not within the step budget), and single-arm.

Goal object references are either a concrete object id or ``category:<name>``,
which any object of that category can satisfy; the category form is what
lets a planner recover by switching to a replacement object after a break.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from .contingency import Difficulty, OutcomeLabel
from .exceptions import ArgumentError, IntegrityError
from .geometry import heading_matrix
from .kinematics import lifts_reaching, load_robot_model
from .scene import SceneObject, WorldState
from .world import Action, ActionResult

DEFAULT_STEP_BUDGET = 50


class TaskCategory(str, Enum):
    DUAL_ESSENTIAL = "dual_essential"
    DUAL_OPTIONAL = "dual_optional"
    SINGLE_ARM = "single_arm"


class FailureCategory(str, Enum):
    NAVIGATION = "navigation"
    BODY_ADJUSTMENT = "body_adjustment"
    LOGICAL = "logical"


# ---------------------------------------------------------------------------
# Goal predicates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectIn:
    object: str
    receptacle: str
    kind: str = "object_in"


@dataclass(frozen=True)
class ObjectState:
    object: str
    flag: str
    value: bool
    kind: str = "object_state"


@dataclass(frozen=True)
class Holding:
    arm: str  # left | right | either | both
    object: str
    kind: str = "holding"


@dataclass(frozen=True)
class WithinSteps:
    budget: int
    kind: str = "within_steps"


GoalPredicate = Union[ObjectIn, ObjectState, Holding, WithinSteps]


def _candidate_objects(state: WorldState, ref: str) -> list[SceneObject]:
    if ref.startswith("category:"):
        category = ref.split(":", 1)[1]
        return [o for oid, o in sorted(state.objects.items()) if o.category == category]
    if ref not in state.objects:
        raise IntegrityError(f"goal references unknown object {ref!r}")
    return [state.objects[ref]]


def _predicate_satisfied(
    pred: GoalPredicate, state: WorldState, steps_used: Optional[int]
) -> bool:
    if isinstance(pred, ObjectIn):
        recv = _candidate_objects(state, pred.receptacle)
        recv_ids = {o.id for o in recv}
        return any(o.parent in recv_ids for o in _candidate_objects(state, pred.object))
    if isinstance(pred, ObjectState):
        return any(
            (pred.flag in o.state) == pred.value for o in _candidate_objects(state, pred.object)
        )
    if isinstance(pred, Holding):
        for obj in _candidate_objects(state, pred.object):
            holders = state.robot.holds(obj.id)
            if pred.arm == "both":
                if len(holders) == 2:
                    return True
            elif pred.arm == "either":
                if holders:
                    return True
            elif pred.arm in holders:
                return True
        return False
    if isinstance(pred, WithinSteps):
        return steps_used is None or steps_used <= pred.budget
    raise ArgumentError(f"unknown goal predicate {pred!r}")


# ---------------------------------------------------------------------------
# Tasks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Task:
    id: str
    category: TaskCategory
    instruction: str
    goals: tuple[GoalPredicate, ...]
    scene: str
    step_budget: int = DEFAULT_STEP_BUDGET
    difficulty: Difficulty = Difficulty.EASY

    def __post_init__(self):
        if self.step_budget < 1:
            raise ArgumentError("step_budget must be at least 1")


def goal_satisfied(task: Task, state: WorldState, steps_used: Optional[int] = None) -> bool:
    """Conjunction over the task's predicates; vacuously true when empty."""
    return all(_predicate_satisfied(p, state, steps_used) for p in task.goals)


def goal_to_dict(pred: GoalPredicate) -> dict:
    if isinstance(pred, ObjectIn):
        return {"kind": "object_in", "object": pred.object, "receptacle": pred.receptacle}
    if isinstance(pred, ObjectState):
        return {
            "kind": "object_state",
            "object": pred.object,
            "flag": pred.flag,
            "value": pred.value,
        }
    if isinstance(pred, Holding):
        return {"kind": "holding", "arm": pred.arm, "object": pred.object}
    if isinstance(pred, WithinSteps):
        return {"kind": "within_steps", "budget": pred.budget}
    raise ArgumentError(f"unknown goal predicate {pred!r}")


def goal_from_dict(doc: dict) -> GoalPredicate:
    kind = doc.get("kind")
    try:
        if kind == "object_in":
            return ObjectIn(object=doc["object"], receptacle=doc["receptacle"])
        if kind == "object_state":
            return ObjectState(object=doc["object"], flag=doc["flag"], value=bool(doc["value"]))
        if kind == "holding":
            arm = doc["arm"]
            if arm not in ("left", "right", "either", "both"):
                raise ArgumentError(f"bad arm selector {arm!r}")
            return Holding(arm=arm, object=doc["object"])
        if kind == "within_steps":
            return WithinSteps(budget=int(doc["budget"]))
    except KeyError as exc:
        raise ArgumentError(f"goal missing field {exc}") from exc
    raise ArgumentError(f"unknown goal kind {kind!r}")


def task_to_dict(task: Task) -> dict:
    return {
        "id": task.id,
        "category": task.category.value,
        "instruction": task.instruction,
        "goals": [goal_to_dict(g) for g in task.goals],
        "scene": task.scene,
        "step_budget": task.step_budget,
        "difficulty": task.difficulty.value,
    }


def task_from_dict(doc: dict) -> Task:
    try:
        return Task(
            id=doc["id"],
            category=TaskCategory(doc["category"]),
            instruction=doc.get("instruction", ""),
            goals=tuple(goal_from_dict(g) for g in doc["goals"]),
            scene=doc["scene"],
            step_budget=int(doc.get("step_budget", DEFAULT_STEP_BUDGET)),
            difficulty=Difficulty(doc.get("difficulty", "easy")),
        )
    except KeyError as exc:
        raise ArgumentError(f"task missing field {exc}") from exc


# ---------------------------------------------------------------------------
# Episode traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReachSnapshot:
    """Context recorded when an interaction came back unreachable."""

    embodiment: str
    base: tuple[float, float, float]
    torso_lift: float
    target: tuple[float, float, float]
    arm: str


@dataclass(frozen=True)
class TraceStep:
    action: Action
    result: ActionResult
    digest: str
    reach: Optional[ReachSnapshot] = None


@dataclass(frozen=True)
class EpisodeTrace:
    steps: tuple[TraceStep, ...]
    success: bool
    seed: int


def _lift_would_reach(snapshot: ReachSnapshot) -> bool:
    model = load_robot_model(snapshot.embodiment)
    bx, by, heading = snapshot.base
    rel = np.array(snapshot.target) - np.array([bx, by, 0.0])
    point_torso = heading_matrix(heading).T @ rel
    arms = ("left", "right") if snapshot.arm == "both" else (snapshot.arm,)
    return any(bool(lifts_reaching(model, arm, point_torso)) for arm in arms)


def classify_failure(trace: EpisodeTrace, task: Task) -> FailureCategory:
    """Deterministic priority rule over a failed trace.

    Navigation: path planning failed, or an interaction point stayed out of
    reach at every torso lift (the robot stood in the wrong place).
    BodyAdjustment: reach failed at the recorded lift but an FK sweep finds
    a lift that would have reached the target.
    Logical: everything else (budget exhausted, arm conflicts, early Done).
    """
    if trace.success:
        raise ArgumentError("classify_failure requires a failed trace")
    saw_body_adjustment = False
    for step in trace.steps:
        if step.result.outcome != OutcomeLabel.UNREACHABLE:
            continue
        if getattr(step.action, "kind", "") == "navigate_to":
            return FailureCategory.NAVIGATION
        if step.reach is not None:
            if _lift_would_reach(step.reach):
                saw_body_adjustment = True
            else:
                return FailureCategory.NAVIGATION
    if saw_body_adjustment:
        return FailureCategory.BODY_ADJUSTMENT
    return FailureCategory.LOGICAL
