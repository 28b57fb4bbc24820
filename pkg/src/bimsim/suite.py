"""Dual-arm task composition and deterministic suite generation.

Dual-arm essential tasks bind their goal to a heavy object (lift_together
territory) or to a heavy openable container (hold_and_open); dual-arm
optional tasks conjoin single-arm transport goals under a step budget of
0.7x the measured serial (single-arm oracle) step count, which forces
parallel arm use. Every generated task is rejection-sampled against the
scripted dual-arm oracle at easy difficulty, so the shipped suites are
solvable by construction.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

from .contingency import Difficulty
from .exceptions import CompositionError, GenerationError
from .kinematics import load_robot_model
from .protocol import SimulatorConfig
from .rng import SplitMix64
from .scene import scene_from_dict
from .tasks import (
    GoalPredicate,
    Holding,
    ObjectIn,
    ObjectState,
    Task,
    TaskCategory,
    WithinSteps,
    task_from_dict,
    task_to_dict,
)

OPTIONAL_BUDGET_FACTOR = 0.7
MAX_GENERATION_ATTEMPTS = 200


def _oracle_report(config: SimulatorConfig, task: Task, mode: str, seed: int = 3):
    from .harness import OraclePlanner, run_episode

    factory = lambda t, emb, s: OraclePlanner(t, emb, mode)
    report, _ = run_episode(config, task, factory, seed, Difficulty.EASY)
    return report


def measure_serial_steps(config: SimulatorConfig, task: Task, seed: int = 3) -> Optional[int]:
    """Single-arm oracle step count at easy difficulty, or None on failure."""
    unlimited = Task(
        id=task.id,
        category=TaskCategory.SINGLE_ARM,
        instruction=task.instruction,
        goals=tuple(g for g in task.goals if not isinstance(g, WithinSteps)),
        scene=task.scene,
        step_budget=200,
        difficulty=Difficulty.EASY,
    )
    report = _oracle_report(config, unlimited, "single_arm", seed)
    return report.steps if report.success else None


def compose_dual_task(
    singles: Sequence[Task],
    mode: str,
    config: SimulatorConfig,
    task_id: Optional[str] = None,
) -> Task:
    """Fuse single-arm tasks into one dual-arm task.

    ``essential`` binds the goals to a heavy object or a hold-while-open
    pattern found among the singles' targets; ``optional`` conjoins the
    goals under a shared step budget tight enough that serial execution
    exceeds it.
    """
    if not singles:
        raise CompositionError("cannot compose an empty task list")
    if mode not in ("essential", "optional"):
        raise CompositionError(f"unknown composition mode {mode!r}")
    scenes = {t.scene for t in singles}
    if len(scenes) != 1:
        raise CompositionError(f"singles span multiple scenes: {sorted(scenes)}")
    scene = singles[0].scene
    if any(t.category != TaskCategory.SINGLE_ARM for t in singles):
        raise CompositionError("compose_dual_task expects single-arm tasks")
    scene_doc = config.scenes[scene]
    world = scene_from_dict(scene_doc, scene_id=scene)
    model = load_robot_model(world.robot.embodiment)

    if mode == "essential":
        goals = _essential_goals(singles, world, model)
        if goals is None:
            raise CompositionError(
                "no heavy object or heavy openable container among the singles' targets"
            )
        return Task(
            id=task_id or f"{scene}-essential-{singles[0].id}",
            category=TaskCategory.DUAL_ESSENTIAL,
            instruction="; ".join(t.instruction for t in singles if t.instruction),
            goals=goals,
            scene=scene,
            step_budget=singles[0].step_budget,
            difficulty=singles[0].difficulty,
        )

    goals = tuple(g for t in singles for g in t.goals if not isinstance(g, WithinSteps))
    draft = Task(
        id=task_id or f"{scene}-optional-" + "-".join(t.id for t in singles),
        category=TaskCategory.DUAL_OPTIONAL,
        instruction="; ".join(t.instruction for t in singles if t.instruction),
        goals=goals,
        scene=scene,
        step_budget=200,
        difficulty=singles[0].difficulty,
    )
    serial = measure_serial_steps(config, draft)
    if serial is None:
        raise CompositionError("serial oracle cannot solve the conjoined goals")
    budget = max(1, round(OPTIONAL_BUDGET_FACTOR * serial))
    return Task(
        id=draft.id,
        category=TaskCategory.DUAL_OPTIONAL,
        instruction=draft.instruction,
        goals=goals + (WithinSteps(budget),),
        scene=scene,
        step_budget=budget,
        difficulty=singles[0].difficulty,
    )


def _essential_goals(singles, world, model) -> Optional[tuple[GoalPredicate, ...]]:
    for task in singles:
        for goal in task.goals:
            ref = getattr(goal, "object", None)
            if ref is None or ref.startswith("category:"):
                continue
            obj = world.objects.get(ref)
            if obj is None:
                continue
            heavy = obj.mass > model.payload_limit
            if not heavy:
                continue
            if isinstance(goal, ObjectIn) and obj.mass <= 2 * model.payload_limit:
                return (goal,)
            if isinstance(goal, (Holding,)) and obj.mass <= 2 * model.payload_limit:
                return (Holding("both", ref),)
            if isinstance(goal, ObjectState) and goal.flag == "open" and obj.has("openable"):
                return (goal,)
    return None


# ---------------------------------------------------------------------------
# Suite generation
# ---------------------------------------------------------------------------


def _transport_candidates(world, model) -> list[tuple[str, str]]:
    objects = []
    receptacles = []
    for oid, obj in sorted(world.objects.items()):
        if obj.has("pickupable") and not obj.is_in_state("broken") and obj.mass <= model.payload_limit:
            objects.append(oid)
        if obj.has("receptacle") and not obj.has("openable"):
            receptacles.append(oid)
    return [(o, r) for o in objects for r in receptacles if world.objects[o].parent != r]


def _heavy_candidates(world, model) -> list[tuple[str, str]]:
    """(object id, pattern) pairs for essential tasks."""
    out = []
    for oid, obj in sorted(world.objects.items()):
        if obj.mass <= model.payload_limit:
            continue
        if obj.has("pickupable") and obj.mass <= 2 * model.payload_limit:
            out.append((oid, "lift"))
        if obj.has("openable") and not obj.is_in_state("open"):
            out.append((oid, "hold_open"))
    return out


def generate_task_suite(
    config: SimulatorConfig,
    counts: dict[str, int],
    seed: int,
) -> list[Task]:
    """Deterministic task suite across the config's scenes.

    ``counts`` maps category names (``single_arm``, ``dual_optional``,
    ``dual_essential``) to how many tasks to generate. Every emitted task is
    verified solvable by the dual-arm oracle at easy difficulty; raises
    GenerationError when a count cannot be satisfied.
    """
    for key, value in counts.items():
        if key not in ("single_arm", "dual_optional", "dual_essential"):
            raise GenerationError(f"unknown category {key!r}")
        if value < 0:
            raise GenerationError("counts must be non-negative")
    gen = SplitMix64(seed)
    scene_ids = sorted(config.scenes)
    if not scene_ids:
        raise GenerationError("no scenes available")

    worlds = {sid: scene_from_dict(config.scenes[sid], scene_id=sid) for sid in scene_ids}
    models = {sid: load_robot_model(worlds[sid].robot.embodiment) for sid in scene_ids}

    tasks: list[Task] = []

    def accept(task: Task) -> bool:
        report = _oracle_report(config, task, "dual_arm")
        return report.success

    def gen_single(index: int) -> Optional[Task]:
        sid = gen.choice(scene_ids)
        candidates = _transport_candidates(worlds[sid], models[sid])
        if not candidates:
            return None
        obj, recv = gen.choice(candidates)
        task = Task(
            id=f"{sid}-single-{index:03d}",
            category=TaskCategory.SINGLE_ARM,
            instruction=f"put {obj} in {recv}",
            goals=(ObjectIn(obj, recv),),
            scene=sid,
        )
        return task if accept(task) else None

    def gen_essential(index: int) -> Optional[Task]:
        sid = gen.choice(scene_ids)
        candidates = _heavy_candidates(worlds[sid], models[sid])
        if not candidates:
            return None
        oid, pattern = gen.choice(candidates)
        if pattern == "lift":
            goals: tuple[GoalPredicate, ...] = (Holding("both", oid),)
            instruction = f"lift {oid} with both arms"
        else:
            goals = (ObjectState(oid, "open", True),)
            instruction = f"open {oid}"
        task = Task(
            id=f"{sid}-essential-{index:03d}",
            category=TaskCategory.DUAL_ESSENTIAL,
            instruction=instruction,
            goals=goals,
            scene=sid,
        )
        return task if accept(task) else None

    def gen_optional(index: int) -> Optional[Task]:
        sid = gen.choice(scene_ids)
        candidates = _transport_candidates(worlds[sid], models[sid])
        if len(candidates) < 2:
            return None
        first = gen.choice(candidates)
        second = gen.choice(candidates)
        if first[0] == second[0]:
            return None
        singles = [
            Task(
                id=f"{sid}-part-{index:03d}-{k}",
                category=TaskCategory.SINGLE_ARM,
                instruction=f"put {obj} in {recv}",
                goals=(ObjectIn(obj, recv),),
                scene=sid,
            )
            for k, (obj, recv) in enumerate((first, second))
        ]
        try:
            task = compose_dual_task(
                singles, "optional", config, task_id=f"{sid}-optional-{index:03d}"
            )
        except CompositionError:
            return None
        return task if accept(task) else None

    generators = {
        "single_arm": gen_single,
        "dual_optional": gen_optional,
        "dual_essential": gen_essential,
    }
    for category in ("single_arm", "dual_optional", "dual_essential"):
        needed = counts.get(category, 0)
        produced = 0
        attempts = 0
        while produced < needed:
            attempts += 1
            if attempts > MAX_GENERATION_ATTEMPTS:
                raise GenerationError(
                    f"could not generate {needed} {category} tasks "
                    f"after {attempts - 1} attempts"
                )
            task = generators[category](produced)
            if task is None:
                continue
            if any(t.id == task.id for t in tasks):
                continue
            tasks.append(task)
            produced += 1
    return tasks


# ---------------------------------------------------------------------------
# Suite manifests
# ---------------------------------------------------------------------------


def save_suite(directory: str, tasks: Sequence[Task], seed: int) -> str:
    """Write task files plus a manifest; returns the manifest path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for task in tasks:
        name = f"{task.id}.task.json"
        with open(out / name, "w", encoding="utf-8") as fh:
            json.dump(task_to_dict(task), fh, indent=2)
        names.append(name)
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump({"seed": seed, "tasks": names}, fh, indent=2)
    return str(manifest_path)


def load_suite(manifest_path: str) -> tuple[list[Task], int]:
    base = Path(manifest_path).parent
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    tasks = []
    for name in manifest["tasks"]:
        with open(base / name, "r", encoding="utf-8") as fh:
            tasks.append(task_from_dict(json.load(fh)))
    return tasks, int(manifest.get("seed", 0))
