"""Trial batches, scripted planners, reports, and the protocol-path runner.

Episodes run against either an in-process session or a protocol server;
both paths drive the identical session logic and produce identical reports
for the same seeds. Trial i uses seed ``base_seed + i`` and is capped at the
task's step budget. Reports keep trial order regardless of scheduling.
"""

from __future__ import annotations

import csv
import hashlib
import json
import socketserver
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .contingency import Difficulty, OutcomeLabel
from .exceptions import ArgumentError
from .geometry import heading_matrix
from .kinematics import RobotModel, lifts_reaching, load_robot_model, point_in_workspace, point_to_chain_frame
from .protocol import Session, SimulatorConfig, observation_payload, payload_to_frame
from .rng import SplitMix64
from .tasks import (
    EpisodeTrace,
    FailureCategory,
    Holding,
    ObjectIn,
    ObjectState,
    ReachSnapshot,
    Task,
    TraceStep,
    WithinSteps,
    classify_failure,
    task_to_dict,
)
from .world import (
    Action,
    ActionResult,
    AdjustHeight,
    Close,
    Done,
    HoldAndOpen,
    LiftTogether,
    NavigateTo,
    ObservationFrame,
    Open,
    PickUp,
    Place,
    Pour,
    action_from_dict,
    action_to_dict,
    observe,
)


class Planner(Protocol):
    def plan(self, frame: ObservationFrame) -> Action: ...

    def notify(self, action: Action, result: ActionResult) -> None: ...


PlannerFactory = Callable[[Task, str, int], Planner]


# ---------------------------------------------------------------------------
# Frame helpers shared by planners
# ---------------------------------------------------------------------------


def _frame_base(frame: ObservationFrame) -> tuple[float, float, float]:
    return frame.proprio[0], frame.proprio[1], frame.proprio[2]


def _frame_lift(frame: ObservationFrame) -> float:
    return frame.proprio[3]


def _frame_held_flags(frame: ObservationFrame) -> tuple[bool, bool]:
    return bool(frame.proprio[-2]), bool(frame.proprio[-1])


def _held_ids(frame: ObservationFrame) -> dict[str, Optional[str]]:
    held = {"left": None, "right": None}
    for v in frame.visible_objects:
        if v.held_by == "both":
            held["left"] = held["right"] = v.id
        elif v.held_by in ("left", "right"):
            held[v.held_by] = v.id
    return held


def _point_torso(frame: ObservationFrame, position) -> np.ndarray:
    bx, by, heading = _frame_base(frame)
    rel = np.array([position[0] - bx, position[1] - by, position[2]])
    return heading_matrix(heading).T @ rel


def reachable_from_frame(
    model: RobotModel, frame: ObservationFrame, position, arm: str, lift: Optional[float] = None
) -> bool:
    lift = _frame_lift(frame) if lift is None else lift
    p_torso = _point_torso(frame, position)
    return point_in_workspace(model, arm, point_to_chain_frame(model, arm, p_torso, lift))


def best_lift_from_frame(
    model: RobotModel, frame: ObservationFrame, position, arm: str
) -> Optional[float]:
    """Torso lift closest to the current one that brings the point in range."""
    lifts = lifts_reaching(model, arm, _point_torso(frame, position))
    if not lifts:
        return None
    current = _frame_lift(frame)
    return min(lifts, key=lambda lv: (abs(lv - current), lv))


# ---------------------------------------------------------------------------
# Scripted oracle planner
# ---------------------------------------------------------------------------


class OraclePlanner:
    """Deterministic scripted policy: navigate, adjust height, grasp, place.

    ``dual_arm`` mode may issue lift_together / hold_and_open and batches
    pickups across both arms before delivering; ``single_arm`` mode never
    issues a dual-arm action and works strictly one goal at a time. On
    failure feedback the next plan step recomputes from the new observation,
    which swaps in a replacement object when the goal names a category.
    """

    def __init__(self, task: Task, embodiment: str, mode: str = "dual_arm"):
        if mode not in ("single_arm", "dual_arm"):
            raise ArgumentError(f"unknown oracle mode {mode!r}")
        self.task = task
        self.mode = mode
        self.model = load_robot_model(embodiment)
        self.blacklist: set[str] = set()
        self.unreachable_strikes: dict[str, int] = {}
        self.seen: dict[str, object] = {}  # last VisibleObject per id
        self._last_action_key: Optional[str] = None
        self._repeats = 0

    # -- feedback ----------------------------------------------------------

    def notify(self, action: Action, result: ActionResult) -> None:
        target = getattr(action, "object", None) or getattr(action, "container", None)
        if isinstance(action, NavigateTo):
            target = action.target if isinstance(action.target, str) else None
        if result.outcome == OutcomeLabel.UNREACHABLE and target is not None:
            strikes = self.unreachable_strikes.get(target, 0) + 1
            self.unreachable_strikes[target] = strikes
            if strikes >= 3:
                self.blacklist.add(target)
        # spinning on one action means the plan is stuck; drop the target
        key = repr(action)
        if key == self._last_action_key:
            self._repeats += 1
            if self._repeats >= 3 and target is not None:
                self.blacklist.add(target)
        else:
            self._last_action_key = key
            self._repeats = 0

    # -- observation helpers -------------------------------------------------

    def _visible(self, frame: ObservationFrame) -> dict[str, object]:
        return {v.id: v for v in frame.visible_objects}

    def _candidates(self, frame: ObservationFrame, ref: str, usable: bool = True) -> list:
        # currently visible objects first, remembered ones as a fallback
        visible_ids = {v.id for v in frame.visible_objects}
        objs = list(frame.visible_objects) + [
            v for oid, v in sorted(self.seen.items()) if oid not in visible_ids
        ]
        if ref.startswith("category:"):
            category = ref.split(":", 1)[1]
            found = [v for v in objs if v.category == category]
        else:
            found = [v for v in objs if v.id == ref]
        if usable:
            found = [
                v for v in found if "broken" not in v.state and v.id not in self.blacklist
            ]
        return sorted(found, key=lambda v: (v.distance, v.id))

    def _free_arms(self, frame: ObservationFrame) -> list[str]:
        left, right = _frame_held_flags(frame)
        return [arm for arm, busy in (("left", left), ("right", right)) if not busy]

    def _nearest_arm(self, frame: ObservationFrame, target) -> Optional[str]:
        free = self._free_arms(frame)
        if not free:
            return None
        preferred = "left" if target.rel_pos[1] >= 0 else "right"
        return preferred if preferred in free else free[0]

    def _heavy(self, target) -> bool:
        return "heavy" in target.properties or target.mass > self.model.payload_limit

    # -- movement primitives -------------------------------------------------

    def _approach(self, frame: ObservationFrame, target, arm: str) -> Optional[Action]:
        """Action bringing the target into reach, or None when already there."""
        if reachable_from_frame(self.model, frame, target.position, arm):
            return None
        lift = best_lift_from_frame(self.model, frame, target.position, arm)
        if lift is not None and abs(lift - _frame_lift(frame)) > 1e-9:
            return AdjustHeight(delta=round(lift - _frame_lift(frame), 6))
        return NavigateTo(target.id)

    def _approach_bimanual(self, frame: ObservationFrame, target) -> Optional[Action]:
        for arm in ("left", "right"):
            if not reachable_from_frame(self.model, frame, target.position, arm):
                lift_l = best_lift_from_frame(self.model, frame, target.position, "left")
                lift_r = best_lift_from_frame(self.model, frame, target.position, "right")
                if (
                    lift_l is not None
                    and lift_r is not None
                    and abs(lift_l - lift_r) < 1e-9
                    and abs(lift_l - _frame_lift(frame)) > 1e-9
                ):
                    return AdjustHeight(delta=round(lift_l - _frame_lift(frame), 6))
                return NavigateTo(target.id)
        return None

    # -- goal handling -------------------------------------------------------

    def _open_container_action(self, frame: ObservationFrame, container, held_id=None):
        """Open a closed container, bracing with the second arm when needed."""
        if self._heavy(container):
            if self.mode != "dual_arm":
                self.blacklist.add(container.id)
                return None
            free = self._free_arms(frame)
            if held_id is None and len(free) < 2:
                return None
            move = self._approach(frame, container, free[0] if free else "right")
            if move is not None:
                return move
            brace = held_id if held_id is not None else container.id
            return HoldAndOpen(held=brace, container=container.id)
        free = self._free_arms(frame)
        if not free:
            return None
        move = self._approach(frame, container, free[0])
        if move is not None:
            return move
        return Open(object=container.id, arm=free[0])

    def _transport_action(self, frame: ObservationFrame, goal: ObjectIn) -> Optional[Action]:
        held = _held_ids(frame)
        receptacles = self._candidates(frame, goal.receptacle, usable=False)
        if not receptacles:
            return None
        recv = receptacles[0]
        # open the destination first, while arms are free
        if "openable" in recv.properties and "open" not in recv.state:
            carried = [oid for oid in held.values() if oid is not None]
            return self._open_container_action(
                frame, recv, held_id=carried[0] if carried else None
            )
        carrying = [
            (arm, oid)
            for arm, oid in held.items()
            if oid is not None and self._matches(oid, goal.object, frame)
        ]
        if carrying:
            arm, oid = carrying[0]
            visible = self._visible(frame)
            if "both" in [v.held_by for v in frame.visible_objects if v.id == oid]:
                arm = "left"
            move = self._approach(frame, recv, arm)
            if move is not None:
                return move
            return Place(object=oid, receptacle=recv.id, arm=arm)
        return self._acquire_action(frame, goal.object)

    def _matches(self, object_id: str, ref: str, frame: ObservationFrame) -> bool:
        if ref.startswith("category:"):
            category = ref.split(":", 1)[1]
            return any(v.id == object_id and v.category == category
                       for v in frame.visible_objects)
        return object_id == ref

    def _acquire_action(self, frame: ObservationFrame, ref: str,
                        bimanual: bool = False) -> Optional[Action]:
        candidates = self._candidates(frame, ref)
        if not candidates:
            return None
        target = candidates[0]
        if self._heavy(target) or bimanual:
            if self.mode != "dual_arm":
                self.blacklist.add(target.id)
                return None
            if len(self._free_arms(frame)) < 2:
                return None
            move = self._approach_bimanual(frame, target)
            if move is not None:
                return move
            return LiftTogether(object=target.id)
        arm = self._nearest_arm(frame, target)
        if arm is None:
            return None
        move = self._approach(frame, target, arm)
        if move is not None:
            return move
        return PickUp(object=target.id, arm=arm)

    def _goal_action(self, frame: ObservationFrame, goal) -> Optional[Action]:
        if isinstance(goal, ObjectIn):
            return self._transport_action(frame, goal)
        if isinstance(goal, ObjectState):
            candidates = self._candidates(frame, goal.object, usable=False)
            if not candidates:
                return None
            target = candidates[0]
            if goal.flag == "open" and goal.value:
                return self._open_container_action(frame, target)
            if goal.flag in ("open", "closed"):
                wants_open = (goal.flag == "open") == goal.value
                free = self._free_arms(frame)
                if not free:
                    return None
                move = self._approach(frame, target, free[0])
                if move is not None:
                    return move
                if wants_open:
                    return Open(object=target.id, arm=free[0])
                return Close(object=target.id, arm=free[0])
            return None
        if isinstance(goal, Holding):
            if goal.arm == "both":
                return self._acquire_action(frame, goal.object, bimanual=True)
            return self._acquire_action(frame, goal.object)
        return None

    def _goal_satisfied_by_frame(self, frame: ObservationFrame, goal) -> bool:
        if isinstance(goal, WithinSteps):
            return True
        if isinstance(goal, ObjectIn):
            recv_ids = {v.id for v in self._candidates(frame, goal.receptacle, usable=False)}
            return any(
                v.parent in recv_ids
                for v in self._candidates(frame, goal.object, usable=False)
            )
        if isinstance(goal, ObjectState):
            return any(
                (goal.flag in v.state) == goal.value
                for v in self._candidates(frame, goal.object, usable=False)
            )
        if isinstance(goal, Holding):
            held = _held_ids(frame)
            matches = [
                arm for arm, oid in held.items()
                if oid is not None and self._matches(oid, goal.object, frame)
            ]
            if goal.arm == "both":
                return len(matches) == 2
            if goal.arm == "either":
                return bool(matches)
            return goal.arm in matches
        return True

    def plan(self, frame: ObservationFrame) -> Action:
        for v in frame.visible_objects:
            self.seen[v.id] = v
        unmet = [g for g in self.task.goals if not self._goal_satisfied_by_frame(frame, g)]
        if not unmet:
            return Done()
        if self.mode == "dual_arm":
            # batch pickups: grab a second transport object while an arm is free
            transports = [g for g in unmet if isinstance(g, ObjectIn)]
            held = _held_ids(frame)
            if transports and any(oid is None for oid in held.values()):
                unheld = [
                    g for g in transports
                    if not any(
                        oid is not None and self._matches(oid, g.object, frame)
                        for oid in held.values()
                    )
                    and self._candidates(frame, g.object)
                ]
                nothing_held = all(oid is None for oid in held.values())

                def goal_distance(g):
                    return self._candidates(frame, g.object)[0].distance

                # approach the farthest object of a cluster first: the nav cell
                # chosen for it tends to keep the nearer ones in reach, saving
                # a navigation action per extra pickup
                unheld.sort(key=goal_distance, reverse=nothing_held)
                for g in unheld:
                    ready_recv = self._candidates(frame, g.receptacle, usable=False)
                    recv_open = ready_recv and not (
                        "openable" in ready_recv[0].properties
                        and "open" not in ready_recv[0].state
                    )
                    if recv_open:
                        action = self._acquire_action(frame, g.object)
                        if action is not None:
                            return action
        for goal in unmet:
            action = self._goal_action(frame, goal)
            if action is not None:
                return action
        return Done()


class RandomPlanner:
    """Uniform choice among the currently well-formed actions."""

    def __init__(self, task: Task, embodiment: str, seed: int):
        self.model = load_robot_model(embodiment)
        self.rng = SplitMix64(seed)

    def notify(self, action: Action, result: ActionResult) -> None:
        pass

    def enumerate_actions(self, frame: ObservationFrame) -> list[Action]:
        model = self.model
        held = _held_ids(frame)
        free = [arm for arm in ("left", "right") if held[arm] is None]
        lift = _frame_lift(frame)
        lo, hi = model.torso_lift_range
        actions: list[Action] = [Done()]
        for v in sorted(frame.visible_objects, key=lambda v: v.id):
            actions.append(NavigateTo(v.id))
            pickable = (
                "pickupable" in v.properties
                and "broken" not in v.state
                and v.held_by is None
            )
            if pickable and "heavy" not in v.properties:
                for arm in free:
                    actions.append(PickUp(object=v.id, arm=arm))
            if (
                pickable
                and "heavy" in v.properties
                and len(free) == 2
                and v.mass <= 2 * model.payload_limit
            ):
                actions.append(LiftTogether(object=v.id))
            if "receptacle" in v.properties and not (
                "openable" in v.properties and "open" not in v.state
            ):
                for arm in ("left", "right"):
                    oid = held[arm]
                    if oid is not None:
                        actions.append(Place(object=oid, receptacle=v.id, arm=arm))
            if "openable" in v.properties:
                is_open = "open" in v.state
                if not is_open and "heavy" not in v.properties:
                    for arm in free:
                        actions.append(Open(object=v.id, arm=arm))
                if is_open:
                    for arm in free:
                        actions.append(Close(object=v.id, arm=arm))
                if not is_open:
                    for arm, oid in held.items():
                        if oid is not None and held[_other(arm)] is None:
                            actions.append(HoldAndOpen(held=oid, container=v.id))
                    if len(free) == 2 and "heavy" in v.properties:
                        actions.append(HoldAndOpen(held=v.id, container=v.id))
        for arm, oid in held.items():
            if oid is None:
                continue
            carried = next((v for v in frame.visible_objects if v.id == oid), None)
            if carried is None or "pourable" not in carried.properties:
                continue
            if "filled" not in carried.state:
                continue
            for v in sorted(frame.visible_objects, key=lambda v: v.id):
                if v.id != oid and "receptacle" in v.properties:
                    actions.append(Pour(object=oid, target=v.id, arm=arm))
        if lift + 0.1 <= hi + 1e-9:
            actions.append(AdjustHeight(delta=0.1))
        if lift - 0.1 >= lo - 1e-9:
            actions.append(AdjustHeight(delta=-0.1))
        return actions

    def plan(self, frame: ObservationFrame) -> Action:
        return self.rng.choice(self.enumerate_actions(frame))


def _other(arm: str) -> str:
    return "right" if arm == "left" else "left"


def oracle_planner_step(
    observation: ObservationFrame, task: Task, mode: str, embodiment: str
) -> Action:
    """One-shot scripted decision (stateless convenience wrapper)."""
    return OraclePlanner(task, embodiment, mode).plan(observation)


def random_planner_step(observation: ObservationFrame, rng: SplitMix64,
                        task: Task, embodiment: str) -> Action:
    planner = RandomPlanner(task, embodiment, seed=0)
    planner.rng = rng
    return planner.plan(observation)


def make_planner_factory(name: str) -> PlannerFactory:
    if name == "oracle-dual":
        return lambda task, emb, seed: OraclePlanner(task, emb, "dual_arm")
    if name == "oracle-single":
        return lambda task, emb, seed: OraclePlanner(task, emb, "single_arm")
    if name == "random":
        return lambda task, emb, seed: RandomPlanner(task, emb, seed)
    if name.startswith("remote:"):
        address = name.split(":", 1)[1]
        return lambda task, emb, seed: RemotePlanner(address, task, seed, embodiment=emb)
    raise ArgumentError(f"unknown planner {name!r}")


# ---------------------------------------------------------------------------
# Episode execution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeReport:
    task_id: str
    embodiment: str
    difficulty: str
    seed: int
    success: bool
    steps: int
    failure_category: Optional[str]
    wall_time: float


def _reach_snapshot(frame: ObservationFrame, action: Action,
                    embodiment: str) -> Optional[ReachSnapshot]:
    """Context for the FK-sweep failure rule, built from the observation."""
    if isinstance(action, NavigateTo):
        return None
    target_id = getattr(action, "object", None) or getattr(action, "container", None)
    if target_id is None:
        return None
    target = next((v for v in frame.visible_objects if v.id == target_id), None)
    if target is None:
        return None
    arm = getattr(action, "arm", None) or "both"
    return ReachSnapshot(
        embodiment=embodiment,
        base=_frame_base(frame),
        torso_lift=_frame_lift(frame),
        target=target.position,
        arm=arm,
    )


def run_episode(
    config: SimulatorConfig,
    task: Task,
    planner_factory: PlannerFactory,
    seed: int,
    difficulty: Optional[Difficulty] = None,
    embodiment: Optional[str] = None,
) -> tuple[EpisodeReport, EpisodeTrace]:
    """One in-process episode: plan, step, trace, classify on failure."""
    session = Session.for_task(
        task, config.scenes[task.scene], config.outcome_table,
        seed=seed, difficulty=difficulty, embodiment=embodiment,
    )
    emb = session.world.robot.embodiment
    planner = planner_factory(task, emb, seed)
    steps: list[TraceStep] = []
    start = time.perf_counter()
    while session.status == "active":
        frame = observe(session.world)
        try:
            if getattr(planner, "wants_payload", False):
                action = planner.plan_payload(observation_payload(session.world))
            else:
                action = planner.plan(frame)
        except Exception as exc:  # planner protocol violation
            session.status = "failed"
            steps.append(TraceStep(
                action=Done(),
                result=ActionResult.of(OutcomeLabel.NO_OP, f"planner error: {exc}", 0),
                digest="",
            ))
            break
        outcome = session.step(action)
        planner.notify(action, outcome.result)
        reach = None
        if outcome.result.outcome == OutcomeLabel.UNREACHABLE:
            reach = _reach_snapshot(frame, action, emb)
        steps.append(TraceStep(action=action, result=outcome.result,
                               digest=outcome.digest, reach=reach))
        if outcome.done:
            break
    wall = time.perf_counter() - start
    success = session.status == "succeeded"
    trace = EpisodeTrace(steps=tuple(steps), success=success, seed=seed)
    category = None if success else classify_failure(trace, task).value
    report = EpisodeReport(
        task_id=task.id,
        embodiment=emb,
        difficulty=(difficulty or task.difficulty).value,
        seed=seed,
        success=success,
        steps=len(steps),
        failure_category=category,
        wall_time=wall,
    )
    return report, trace


def run_episode_remote(
    address: tuple[str, int],
    task: Task,
    planner_factory: PlannerFactory,
    seed: int,
    difficulty: Optional[Difficulty] = None,
) -> tuple[EpisodeReport, EpisodeTrace]:
    """Same episode loop, but over the wire against a protocol server."""
    from .tcp_server import LineClient

    with LineClient(*address) as client:
        response = client.request({
            "type": "reset",
            "task": task.id,
            "seed": seed,
            "difficulty": (difficulty or task.difficulty).value,
        })
        if not response.get("ok"):
            raise ArgumentError(f"reset failed: {response.get('error')}")
        session_id = response["session"]
        emb = response["observation"]["robot"]["embodiment"]
        planner = planner_factory(task, emb, seed)
        payload = response["observation"]
        steps: list[TraceStep] = []
        start = time.perf_counter()
        success = False
        while True:
            frame = payload_to_frame(payload)
            try:
                if getattr(planner, "wants_payload", False):
                    action = planner.plan_payload(payload)
                else:
                    action = planner.plan(frame)
            except Exception as exc:
                steps.append(TraceStep(
                    action=Done(),
                    result=ActionResult.of(OutcomeLabel.NO_OP, f"planner error: {exc}", 0),
                    digest="",
                ))
                break
            response = client.request({
                "type": "step",
                "session": session_id,
                "action": action_to_dict(action),
            })
            if not response.get("ok"):
                raise ArgumentError(f"step failed: {response.get('error')}")
            result = ActionResult(
                outcome=OutcomeLabel(response["result"]["outcome"]),
                feedback=response["feedback"],
                ticks_consumed=int(response["result"]["ticks_consumed"]),
                success=bool(response["result"]["success"]),
            )
            planner.notify(action, result)
            reach = None
            if result.outcome == OutcomeLabel.UNREACHABLE:
                reach = _reach_snapshot(frame, action, emb)
            steps.append(TraceStep(action=action, result=result,
                                   digest=response["digest"], reach=reach))
            payload = response["observation"]
            if response["done"]:
                success = bool(response["success"])
                break
        client.request({"type": "close", "session": session_id})
    wall = time.perf_counter() - start
    trace = EpisodeTrace(steps=tuple(steps), success=success, seed=seed)
    category = None if success else classify_failure(trace, task).value
    report = EpisodeReport(
        task_id=task.id,
        embodiment=emb,
        difficulty=(difficulty or task.difficulty).value,
        seed=seed,
        success=success,
        steps=len(steps),
        failure_category=category,
        wall_time=wall,
    )
    return report, trace


def run_trials(
    config: SimulatorConfig,
    task: Task,
    planner_factory: PlannerFactory,
    n: int,
    base_seed: int,
    difficulty: Optional[Difficulty] = None,
    embodiment: Optional[str] = None,
    workers: int = 1,
    server_address: Optional[tuple[str, int]] = None,
) -> list[EpisodeReport]:
    """n episodes with seeds base_seed + i; reports in trial order."""
    if n < 1:
        raise ArgumentError("need at least one trial")

    def one(i: int) -> EpisodeReport:
        seed = base_seed + i
        if server_address is not None:
            report, _ = run_episode_remote(server_address, task, planner_factory,
                                           seed, difficulty)
        else:
            report, _ = run_episode(config, task, planner_factory, seed,
                                    difficulty, embodiment)
        return report

    if workers <= 1:
        return [one(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(n)))


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def success_rate(reports: Sequence[EpisodeReport]) -> float:
    if not reports:
        raise ArgumentError("success_rate of empty report list")
    return sum(1 for r in reports if r.success) / len(reports)


def failure_histogram(reports: Sequence[EpisodeReport]) -> tuple[int, int, int]:
    """(navigation, body_adjustment, logical) counts among failed episodes."""
    bins = {c.value: 0 for c in FailureCategory}
    for r in reports:
        if not r.success and r.failure_category is not None:
            bins[r.failure_category] += 1
    return (
        bins[FailureCategory.NAVIGATION.value],
        bins[FailureCategory.BODY_ADJUSTMENT.value],
        bins[FailureCategory.LOGICAL.value],
    )


@dataclass(frozen=True)
class SuiteReport:
    per_category_rates: dict[str, float]
    failure_histogram: tuple[int, int, int]
    trials: int
    config_digest: str


def build_suite_report(reports: Sequence[EpisodeReport],
                       tasks: dict[str, Task], config_digest: str) -> SuiteReport:
    by_category: dict[str, list[EpisodeReport]] = {}
    for r in reports:
        category = tasks[r.task_id].category.value
        by_category.setdefault(category, []).append(r)
    rates = {cat: success_rate(rs) for cat, rs in sorted(by_category.items())}
    return SuiteReport(
        per_category_rates=rates,
        failure_histogram=failure_histogram(reports),
        trials=len(reports),
        config_digest=config_digest,
    )


def config_digest_of(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]


def write_reports_csv(path: str, reports: Sequence[EpisodeReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "task_id", "embodiment", "difficulty", "seed", "success",
            "steps", "failure_category", "wall_time",
        ])
        for r in reports:
            writer.writerow([
                r.task_id, r.embodiment, r.difficulty, r.seed,
                int(r.success), r.steps, r.failure_category or "", f"{r.wall_time:.6f}",
            ])


def write_suite_json(path: str, suite: SuiteReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "per_category_rates": suite.per_category_rates,
                "failure_histogram": {
                    "navigation": suite.failure_histogram[0],
                    "body_adjustment": suite.failure_histogram[1],
                    "logical": suite.failure_histogram[2],
                },
                "trials": suite.trials,
                "config_digest": suite.config_digest,
            },
            fh,
            indent=2,
        )


# ---------------------------------------------------------------------------
# Remote planner (the harness queries an external policy over NDJSON)
# ---------------------------------------------------------------------------


class RemotePlanner:
    """Planner proxied over a one-line-JSON-per-request connection.

    Request: {"type": "plan", "observation": ..., "task": ..., "last": ...}
    Response: {"action": {...}}
    """

    wants_payload = True

    def __init__(self, address: str, task: Task, seed: int, embodiment: str = ""):
        host, _, port = address.rpartition(":")
        from .tcp_server import LineClient

        self.client = LineClient(host or "127.0.0.1", int(port))
        self.task = task
        self.last: Optional[dict] = None
        self.client.request({
            "type": "start",
            "task": task_to_dict(task),
            "seed": seed,
            "embodiment": embodiment,
        })

    def plan_payload(self, payload: dict) -> Action:
        response = self.client.request(
            {"type": "plan", "observation": payload, "task": task_to_dict(self.task),
             "last": self.last}
        )
        if not response.get("ok"):
            raise ArgumentError(f"remote planner error: {response.get('error')}")
        return action_from_dict(response["action"])

    def notify(self, action: Action, result: ActionResult) -> None:
        self.last = {
            "action": action_to_dict(action),
            "outcome": result.outcome.value,
            "feedback": result.feedback,
            "success": result.success,
        }


class PlannerServer(socketserver.ThreadingTCPServer):
    """Serves any local planner factory over the remote-planner protocol.

    Each connection owns one planner: 'start' instantiates it from the task
    payload and seed, 'plan' maps an observation payload to an action dict.
    """

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, factory: PlannerFactory, host: str = "127.0.0.1", port: int = 0):
        self.factory = factory
        super().__init__((host, port), _PlannerHandler)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]


class _PlannerHandler(socketserver.StreamRequestHandler):
    def handle(self):
        from .tasks import task_from_dict

        factory: PlannerFactory = self.server.factory  # type: ignore[attr-defined]
        planner: Optional[Planner] = None
        while True:
            line = self.rfile.readline()
            if not line:
                return
            try:
                msg = json.loads(line.decode("utf-8"))
                if msg["type"] == "start":
                    task = task_from_dict(msg["task"])
                    embodiment = msg.get("embodiment", "")
                    planner = factory(task, embodiment, int(msg.get("seed", 0)))
                    response = {"ok": True}
                elif msg["type"] == "plan":
                    if planner is None:
                        response = {"ok": False, "error": "plan before start"}
                        self.wfile.write((json.dumps(response) + "\n").encode("utf-8"))
                        self.wfile.flush()
                        continue
                    frame = payload_to_frame(msg["observation"])
                    if msg.get("last") is not None:
                        last = msg["last"]
                        planner.notify(
                            action_from_dict(last["action"]),
                            ActionResult(
                                outcome=OutcomeLabel(last["outcome"]),
                                feedback=last["feedback"],
                                ticks_consumed=0,
                                success=bool(last["success"]),
                            ),
                        )
                    response = {"ok": True, "action": action_to_dict(planner.plan(frame))}
                else:
                    response = {"ok": False, "error": f"unknown type {msg.get('type')!r}"}
            except Exception as exc:
                response = {"ok": False, "error": str(exc)}
            self.wfile.write((json.dumps(response) + "\n").encode("utf-8"))
            self.wfile.flush()


class BackgroundPlannerServer:
    def __init__(self, factory: PlannerFactory, host: str = "127.0.0.1", port: int = 0):
        self.server = PlannerServer(factory, host, port)
        self.thread: Optional[threading.Thread] = None

    def __enter__(self) -> "BackgroundPlannerServer":
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()
        return self

    @property
    def address(self) -> tuple[str, int]:
        return self.server.address

    def __exit__(self, *exc) -> None:
        self.server.shutdown()
        self.server.server_close()
        if self.thread is not None:
            self.thread.join(timeout=5)
