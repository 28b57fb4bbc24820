"""Action execution, navigation, observation and tick-level motion.

Every interaction action runs the same pipeline: precondition check,
reachability check (workspace hull), IK solve, contingency draw, outcome
effects, then a trajectory is scheduled and played out tick by tick. The
outcome is decided (and its state edits applied) when the action starts;
the scheduled motion only animates joints and held-object poses.

Failed preconditions and unreachable targets consume one tick and no
contingency draw, so outcome statistics stay interpretable.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from .contingency import (
    Difficulty,
    OutcomeLabel,
    OutcomeTable,
    apply_outcome,
    load_outcome_table,
    sample_outcome,
    scale_for_difficulty,
)
from .exceptions import ArgumentError
from .geometry import Pose, heading_matrix, make_transform, quat_from_axis_angle, quat_mul
from .kinematics import (
    arm_fk_torso,
    grasp_orientation,
    ik_decoupled,
    ik_whole_body,
    interpolate_trajectory,
    com_in_support,
    point_in_workspace,
    point_to_chain_frame,
)
from .scene import Cell, InFlight, SceneObject, WorldState

LINE_OF_SIGHT_RADIUS = 5.0  # meters
BIMANUAL_GRASP_CLEARANCE = 0.02

# token grid semantics: 0 empty, 1 blocked/wall, 2 robot, 3 unknown object
TOKEN_EMPTY, TOKEN_BLOCKED, TOKEN_ROBOT, TOKEN_UNKNOWN = 0, 1, 2, 3
CATEGORY_TOKENS = {
    name: 10 + i
    for i, name in enumerate(
        [
            "cup", "mug", "pot", "pan", "plate", "bottle", "book", "box",
            "lamp", "drawer", "cabinet", "fridge", "sink", "table", "sofa",
            "bed", "shelf", "counter",
        ]
    )
}


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NavigateTo:
    target: Union[str, Cell]
    kind: str = "navigate_to"


@dataclass(frozen=True)
class PickUp:
    object: str
    arm: str
    kind: str = "pick_up"


@dataclass(frozen=True)
class Place:
    object: str
    receptacle: str
    arm: str
    kind: str = "place"


@dataclass(frozen=True)
class Open:
    object: str
    arm: str
    kind: str = "open"


@dataclass(frozen=True)
class Close:
    object: str
    arm: str
    kind: str = "close"


@dataclass(frozen=True)
class Pour:
    object: str
    target: str
    arm: str
    kind: str = "pour"


@dataclass(frozen=True)
class AdjustHeight:
    delta: float
    kind: str = "adjust_height"


@dataclass(frozen=True)
class LiftTogether:
    object: str
    kind: str = "lift_together"


@dataclass(frozen=True)
class HoldAndOpen:
    held: str
    container: str
    kind: str = "hold_and_open"


@dataclass(frozen=True)
class Done:
    kind: str = "done"


Action = Union[
    NavigateTo, PickUp, Place, Open, Close, Pour, AdjustHeight, LiftTogether, HoldAndOpen, Done
]

# actions that bind both arms at once
DUAL_ARM_KINDS = {"lift_together", "hold_and_open"}
# actions whose outcome is drawn from the contingency table
SAMPLED_KINDS = {"pick_up", "place", "open", "close", "pour", "lift_together", "hold_and_open"}


def action_to_dict(action: Action) -> dict:
    d = {"type": action.kind}
    if isinstance(action, NavigateTo):
        if isinstance(action.target, str):
            d["target"] = action.target
        else:
            d["cell"] = list(action.target)
    elif isinstance(action, PickUp):
        d.update(object=action.object, arm=action.arm)
    elif isinstance(action, Place):
        d.update(object=action.object, receptacle=action.receptacle, arm=action.arm)
    elif isinstance(action, (Open, Close)):
        d.update(object=action.object, arm=action.arm)
    elif isinstance(action, Pour):
        d.update(object=action.object, target=action.target, arm=action.arm)
    elif isinstance(action, AdjustHeight):
        d["delta"] = action.delta
    elif isinstance(action, LiftTogether):
        d["object"] = action.object
    elif isinstance(action, HoldAndOpen):
        d.update(held=action.held, container=action.container)
    return d


def action_from_dict(d: dict) -> Action:
    if not isinstance(d, dict) or "type" not in d:
        raise ArgumentError("action must be an object with a 'type' field")
    kind = d["type"]
    try:
        if kind == "navigate_to":
            if "target" in d:
                return NavigateTo(target=str(d["target"]))
            cell = d["cell"]
            return NavigateTo(target=(int(cell[0]), int(cell[1])))
        if kind == "pick_up":
            return PickUp(object=str(d["object"]), arm=_check_arm(d["arm"]))
        if kind == "place":
            return Place(
                object=str(d["object"]),
                receptacle=str(d["receptacle"]),
                arm=_check_arm(d["arm"]),
            )
        if kind == "open":
            return Open(object=str(d["object"]), arm=_check_arm(d["arm"]))
        if kind == "close":
            return Close(object=str(d["object"]), arm=_check_arm(d["arm"]))
        if kind == "pour":
            return Pour(
                object=str(d["object"]), target=str(d["target"]), arm=_check_arm(d["arm"])
            )
        if kind == "adjust_height":
            return AdjustHeight(delta=float(d["delta"]))
        if kind == "lift_together":
            return LiftTogether(object=str(d["object"]))
        if kind == "hold_and_open":
            return HoldAndOpen(held=str(d["held"]), container=str(d["container"]))
        if kind == "done":
            return Done()
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ArgumentError(f"malformed {kind} action: {exc}") from exc
    raise ArgumentError(f"unknown action type {kind!r}")


def _check_arm(arm: str) -> str:
    if arm not in ("left", "right"):
        raise ArgumentError(f"arm must be 'left' or 'right', got {arm!r}")
    return arm


@dataclass(frozen=True)
class ActionResult:
    outcome: OutcomeLabel
    feedback: str
    ticks_consumed: int
    success: bool

    @staticmethod
    def of(outcome: OutcomeLabel, feedback: str, ticks: int) -> "ActionResult":
        return ActionResult(
            outcome=outcome,
            feedback=feedback,
            ticks_consumed=ticks,
            success=outcome == OutcomeLabel.SUCCESS,
        )


# ---------------------------------------------------------------------------
# Navigation
# ---------------------------------------------------------------------------


def plan_navigation(world: WorldState, goal: Cell) -> Optional[list[Cell]]:
    """Shortest 4-connected collision-free path to ``goal``.

    Returns the cells to traverse (excluding the start, including the goal),
    an empty list when already there, or None when unreachable. A* with a
    Manhattan heuristic; deterministic tie-breaking.
    """
    grid = world.grid
    if not grid.in_bounds(goal):
        raise ArgumentError(f"goal cell {goal} outside the grid")
    start = grid.cell_of(world.robot.base[0], world.robot.base[1])
    if start == goal:
        return []
    blocked = world.blocked_cells()
    if goal in blocked:
        return None

    def h(c: Cell) -> int:
        return abs(c[0] - goal[0]) + abs(c[1] - goal[1])

    open_heap: list[tuple[int, int, Cell]] = [(h(start), 0, start)]
    g_score = {start: 0}
    came: dict[Cell, Cell] = {}
    while open_heap:
        f, g, cell = heapq.heappop(open_heap)
        if cell == goal:
            path = [cell]
            while cell in came:
                cell = came[cell]
                path.append(cell)
            path.reverse()
            return path[1:]
        if g > g_score.get(cell, 1 << 30):
            continue
        x, y = cell
        for nxt in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if not grid.in_bounds(nxt) or nxt in blocked:
                continue
            ng = g + 1
            if ng < g_score.get(nxt, 1 << 30):
                g_score[nxt] = ng
                came[nxt] = cell
                heapq.heappush(open_heap, (ng + h(nxt), ng, nxt))
    return None


def interaction_cells(world: WorldState, object_id: str) -> list[Cell]:
    """Free cells 4-adjacent to the object's cell, in deterministic order."""
    obj = world.object(object_id)
    ox, oy = world.grid.cell_of(obj.pose.position[0], obj.pose.position[1])
    blocked = world.blocked_cells()
    cells = []
    for cell in ((ox + 1, oy), (ox - 1, oy), (ox, oy + 1), (ox, oy - 1)):
        if world.grid.in_bounds(cell) and cell not in blocked:
            cells.append(cell)
    return sorted(cells)


# ---------------------------------------------------------------------------
# Reachability
# ---------------------------------------------------------------------------


def _world_to_torso(world: WorldState, point_world: np.ndarray) -> np.ndarray:
    bx, by, heading = world.robot.base
    rel = np.asarray(point_world, float) - np.array([bx, by, 0.0])
    return heading_matrix(heading).T @ rel


def _torso_to_world(world: WorldState, point_torso: np.ndarray) -> np.ndarray:
    bx, by, heading = world.robot.base
    return heading_matrix(heading) @ np.asarray(point_torso, float) + np.array([bx, by, 0.0])


def grasp_point(obj: SceneObject) -> np.ndarray:
    return np.array(obj.pose.position, dtype=float)


def check_reachability(world: WorldState, object_id: str, arm: str) -> Optional[Pose]:
    """Feasible end-effector pose for the object's grasp point, if in range.

    The grasp point must fall inside the arm's FK-sampled workspace hull at
    the current base pose and torso lift. The returned pose points the tool
    axis from the shoulder toward the grasp point.
    """
    obj = world.object(object_id)
    model = world.model
    point = grasp_point(obj)
    p_torso = _world_to_torso(world, point)
    p_chain = point_to_chain_frame(model, arm, p_torso, world.robot.torso_lift)
    if not point_in_workspace(model, arm, p_chain):
        return None
    yaw = math.atan2(p_chain[1], p_chain[0])
    pitch = -math.atan2(p_chain[2], math.hypot(p_chain[0], p_chain[1]))
    _, _, heading = world.robot.base
    orientation = quat_mul(
        quat_from_axis_angle((0.0, 0.0, 1.0), heading + yaw),
        quat_from_axis_angle((0.0, 1.0, 0.0), pitch),
    )
    return Pose(position=tuple(float(v) for v in point), orientation=orientation)


# ---------------------------------------------------------------------------
# IK adapters (embodiment dispatch)
# ---------------------------------------------------------------------------


def _held_masses(world: WorldState) -> tuple[float, float]:
    out = []
    for arm in ("left", "right"):
        oid = world.robot.held[arm]
        mass = world.objects[oid].mass if oid else 0.0
        holders = world.robot.holds(oid) if oid else []
        out.append(mass / len(holders) if holders else mass)
    return (out[0], out[1])


def _solve_arm(
    world: WorldState, arm: str, target_world: np.ndarray
) -> Optional[tuple[tuple[float, ...], tuple[float, ...], float]]:
    """New (qL, qR, lift) reaching a world point with one arm, or None.

    x1 solves the moving arm independently; h1 solves both arms plus the
    torso lift as one whole-body problem with the idle arm told to stay put.
    """
    model = world.model
    robot = world.robot
    p_torso = _world_to_torso(world, target_world)
    if model.embodiment == "x1":
        chain = model.chain(arm)
        p_chain = point_to_chain_frame(model, arm, p_torso, robot.torso_lift)
        direction = grasp_orientation(p_chain)
        q = ik_decoupled(chain, direction, p_chain, np.array(robot.arm_joints[arm]),
                         position_only=True)
        if q is None:
            return None
        ql = tuple(q) if arm == "left" else robot.arm_joints["left"]
        qr = tuple(q) if arm == "right" else robot.arm_joints["right"]
        return (tuple(ql), tuple(qr), robot.torso_lift)
    # whole-body: idle arm holds its current pose
    q0 = model.pack_full(robot.arm_joints["left"], robot.arm_joints["right"], robot.torso_lift)
    targets = {}
    for side in ("left", "right"):
        if side == arm:
            rot = grasp_orientation(p_torso - np.array(model.chain(side).mount))
            targets[side] = make_transform(rot, p_torso)
        else:
            rot_c, pos_c = arm_fk_torso(model, side, robot.arm_joints[side], robot.torso_lift)
            targets[side] = make_transform(rot_c, pos_c)
    sol = ik_whole_body(
        model, targets["left"], targets["right"], q0,
        held_masses=_held_masses(world), position_only=True,
    )
    if sol is None:
        return None
    ql, qr, lift = model.unpack_full(sol)
    return (tuple(ql), tuple(qr), float(lift))


def _solve_bimanual(
    world: WorldState, object_id: str
) -> Optional[tuple[tuple[float, ...], tuple[float, ...], float]]:
    """Both hands on either side of an object, balance-gated."""
    model = world.model
    robot = world.robot
    obj = world.object(object_id)
    p_torso = _world_to_torso(world, grasp_point(obj))
    half = obj.grasp_width / 2.0 + BIMANUAL_GRASP_CLEARANCE
    target_l = p_torso + np.array([0.0, half, 0.0])
    target_r = p_torso - np.array([0.0, half, 0.0])
    share = obj.mass / 2.0
    q0 = model.pack_full(robot.arm_joints["left"], robot.arm_joints["right"], robot.torso_lift)
    if model.embodiment == "x1":
        sols = []
        lift = robot.torso_lift
        for side, target in (("left", target_l), ("right", target_r)):
            chain = model.chain(side)
            p_chain = point_to_chain_frame(model, side, target, lift)
            q = ik_decoupled(chain, None, p_chain, np.array(robot.arm_joints[side]),
                             position_only=True)
            if q is None:
                return None
            sols.append(tuple(q))
        if not com_in_support(model, lift, sols[0], sols[1], (share, share)):
            return None
        return (sols[0], sols[1], lift)
    sol = ik_whole_body(
        model,
        make_transform(np.eye(3), target_l),
        make_transform(np.eye(3), target_r),
        q0,
        held_masses=(share, share),
        position_only=True,
    )
    if sol is None:
        return None
    ql, qr, lift = model.unpack_full(sol)
    return (tuple(ql), tuple(qr), float(lift))


# ---------------------------------------------------------------------------
# Tick-level motion
# ---------------------------------------------------------------------------


def _joint_frames(
    world: WorldState, ql_goal, qr_goal, lift_goal: float
) -> tuple[tuple, ...]:
    model = world.model
    robot = world.robot
    q_start = model.pack_full(robot.arm_joints["left"], robot.arm_joints["right"], robot.torso_lift)
    q_goal = model.pack_full(ql_goal, qr_goal, lift_goal)
    traj = interpolate_trajectory(q_start, q_goal)
    nl = model.left.n_joints
    frames = []
    for wp in traj.waypoints[1:]:  # frame 0 is the current configuration
        frames.append(
            (robot.base, float(wp[-1]), tuple(wp[:nl]), tuple(wp[nl:-1]))
        )
    return tuple(frames)


def _nav_frames(world: WorldState, path: list[Cell], final_heading: float) -> tuple[tuple, ...]:
    robot = world.robot
    frames = []
    px, py = robot.base[0], robot.base[1]
    for i, cell in enumerate(path):
        cx, cy = world.grid.center(cell)
        heading = math.atan2(cy - py, cx - px) if (cx, cy) != (px, py) else robot.base[2]
        if i == len(path) - 1:
            heading = final_heading
        frames.append(((cx, cy, heading), robot.torso_lift,
                       robot.arm_joints["left"], robot.arm_joints["right"]))
        px, py = cx, cy
    return tuple(frames)


def _update_held_poses(world: WorldState) -> WorldState:
    model = world.model
    moved = []
    done_ids = set()
    for arm in ("left", "right"):
        oid = world.robot.held[arm]
        if oid is None or oid in done_ids:
            continue
        holders = world.robot.holds(oid)
        pos = np.zeros(3)
        for holder in holders:
            _, p = arm_fk_torso(model, holder, world.robot.arm_joints[holder],
                                world.robot.torso_lift)
            pos += _torso_to_world(world, p)
        pos /= len(holders)
        obj = world.objects[oid]
        moved.append(obj.with_pose(Pose(tuple(float(v) for v in pos), obj.pose.orientation)))
        done_ids.add(oid)
    return world.with_objects(moved) if moved else world


def step_tick(world: WorldState) -> WorldState:
    """Advance one tick: play the next in-flight frame, move held objects."""
    flight = world.in_flight
    if flight is None:
        return world.advanced()
    base, lift, ql, qr = flight.frames[flight.index]
    robot = replace(
        world.robot,
        base=tuple(base),
        torso_lift=float(lift),
        arm_joints={"left": tuple(ql), "right": tuple(qr)},
    )
    nxt = InFlight(flight.frames, flight.index + 1)
    world = world.with_robot(robot).with_in_flight(None if nxt.remaining == 0 else nxt)
    world = _update_held_poses(world)
    return world.advanced()


def run_ticks_to_completion(world: WorldState) -> WorldState:
    while world.in_flight is not None:
        world = step_tick(world)
    return world


# ---------------------------------------------------------------------------
# Nominal (success) effects
# ---------------------------------------------------------------------------


def nominal_effect(world: WorldState, action: Action) -> WorldState:
    """State edits of a successful action (pure; motion handled separately)."""
    robot = world.robot
    if isinstance(action, PickUp):
        obj = world.object(action.object)
        held = dict(robot.held)
        held[action.arm] = obj.id
        return world.with_object(obj.with_parent(None)).with_robot(replace(robot, held=held))
    if isinstance(action, LiftTogether):
        obj = world.object(action.object)
        return world.with_object(obj.with_parent(None)).with_robot(
            replace(robot, held={"left": obj.id, "right": obj.id})
        )
    if isinstance(action, Place):
        obj = world.object(action.object)
        recv = world.object(action.receptacle)
        rx, ry, rz = recv.pose.position
        held = {arm: (None if oid == obj.id else oid) for arm, oid in robot.held.items()}
        placed = obj.with_parent(recv.id).with_pose(
            Pose((rx, ry, rz + 0.05), obj.pose.orientation)
        )
        return world.with_object(placed).with_robot(replace(robot, held=held))
    if isinstance(action, (Open, HoldAndOpen)):
        target_id = action.object if isinstance(action, Open) else action.container
        obj = world.object(target_id)
        return world.with_object(obj.with_state(add=("open",), remove=("closed",)))
    if isinstance(action, Close):
        obj = world.object(action.object)
        return world.with_object(obj.with_state(add=("closed",), remove=("open",)))
    if isinstance(action, Pour):
        src = world.object(action.object)
        dst = world.object(action.target)
        world = world.with_object(src.with_state(remove=("filled",)))
        if dst.has("receptacle") or dst.has("pourable"):
            world = world.with_object(world.object(dst.id).with_state(add=("filled",)))
        return world
    return world


# ---------------------------------------------------------------------------
# apply_action
# ---------------------------------------------------------------------------


def _fail(world: WorldState, outcome: OutcomeLabel, feedback: str):
    return world.advanced(), ActionResult.of(outcome, feedback, 1)


def _precondition_error(world: WorldState, action: Action) -> Optional[str]:
    robot = world.robot
    model = world.model

    def obj_or_msg(oid):
        return world.objects.get(oid)

    if isinstance(action, PickUp):
        obj = obj_or_msg(action.object)
        if obj is None:
            return f"no object named {action.object}"
        if robot.held[action.arm] is not None:
            return f"{action.arm} arm is already holding {robot.held[action.arm]}"
        if obj.id in robot.held.values():
            return f"{obj.id} is already held"
        if not obj.has("pickupable"):
            return f"{obj.id} cannot be picked up"
        if obj.is_in_state("broken"):
            return f"{obj.id} is broken"
        if obj.has("heavy"):
            return f"{obj.id} is too heavy for one arm (needs lift_together)"
        parent = world.objects.get(obj.parent) if obj.parent else None
        if parent is not None and parent.has("openable") and not parent.is_in_state("open"):
            return f"{obj.id} is inside closed {parent.id}"
        return None
    if isinstance(action, Place):
        if robot.held[action.arm] != action.object:
            return f"{action.arm} arm is not holding {action.object}"
        recv = obj_or_msg(action.receptacle)
        if recv is None:
            return f"no object named {action.receptacle}"
        if not recv.has("receptacle"):
            return f"{recv.id} is not a receptacle"
        if recv.has("openable") and not recv.is_in_state("open"):
            return f"{recv.id} is closed"
        return None
    if isinstance(action, (Open, Close)):
        obj = obj_or_msg(action.object)
        if obj is None:
            return f"no object named {action.object}"
        if not obj.has("openable"):
            return f"{obj.id} cannot be opened"
        if robot.held[action.arm] is not None:
            return f"{action.arm} arm is occupied"
        if isinstance(action, Open):
            if obj.is_in_state("open"):
                return f"{obj.id} is already open"
            if obj.has("heavy"):
                return f"{obj.id} is too heavy to open one-handed (needs hold_and_open)"
        else:
            if not obj.is_in_state("open"):
                return f"{obj.id} is not open"
        return None
    if isinstance(action, Pour):
        obj = obj_or_msg(action.object)
        if obj is None:
            return f"no object named {action.object}"
        if robot.held[action.arm] != action.object:
            return f"{action.arm} arm is not holding {action.object}"
        if not obj.has("pourable"):
            return f"{obj.id} is not pourable"
        if not obj.is_in_state("filled"):
            return f"{obj.id} is empty"
        if obj_or_msg(action.target) is None:
            return f"no object named {action.target}"
        return None
    if isinstance(action, AdjustHeight):
        lo, hi = model.torso_lift_range
        new_lift = robot.torso_lift + action.delta
        if not lo - 1e-9 <= new_lift <= hi + 1e-9:
            return f"torso lift {new_lift:.3f} outside [{lo}, {hi}]"
        return None
    if isinstance(action, LiftTogether):
        obj = obj_or_msg(action.object)
        if obj is None:
            return f"no object named {action.object}"
        if robot.free_arms() != ["left", "right"]:
            return "both arms must be free to lift together"
        if not obj.has("pickupable"):
            return f"{obj.id} cannot be picked up"
        if obj.is_in_state("broken"):
            return f"{obj.id} is broken"
        if obj.mass > 2 * model.payload_limit:
            return f"{obj.id} is too heavy even for both arms"
        parent = world.objects.get(obj.parent) if obj.parent else None
        if parent is not None and parent.has("openable") and not parent.is_in_state("open"):
            return f"{obj.id} is inside closed {parent.id}"
        return None
    if isinstance(action, HoldAndOpen):
        container = obj_or_msg(action.container)
        if container is None:
            return f"no object named {action.container}"
        if not container.has("openable"):
            return f"{container.id} cannot be opened"
        if container.is_in_state("open"):
            return f"{container.id} is already open"
        held_obj = obj_or_msg(action.held)
        if held_obj is None:
            return f"no object named {action.held}"
        if action.held == action.container:
            if robot.free_arms() != ["left", "right"]:
                return "both arms must be free to brace and open"
        else:
            holders = robot.holds(action.held)
            if len(holders) != 1:
                return f"{action.held} must be held in exactly one hand"
            if not robot.free_arms():
                return "no free arm to open with"
        return None
    if isinstance(action, NavigateTo):
        if isinstance(action.target, str) and action.target not in world.objects:
            return f"no object named {action.target}"
        return None
    return None


def apply_action(
    world: WorldState,
    action: Action,
    difficulty: Optional[Difficulty] = None,
    table: Optional[OutcomeTable] = None,
) -> tuple[WorldState, ActionResult]:
    """Run one action against the world, scheduling its motion in flight.

    ``difficulty=None`` samples the nominal table distribution; a difficulty
    level rescales it first. The caller (or ``run_action``) advances ticks
    until the motion finishes.
    """
    if world.in_flight is not None:
        raise ArgumentError("a trajectory is already in flight")
    if table is None:
        table = _default_table()

    if isinstance(action, Done):
        return world, ActionResult.of(OutcomeLabel.NO_OP, "episode ended by planner", 0)

    msg = _precondition_error(world, action)
    if msg is not None:
        return _fail(world, OutcomeLabel.NO_OP, msg)

    if isinstance(action, NavigateTo):
        return _apply_navigate(world, action)
    if isinstance(action, AdjustHeight):
        robot = world.robot
        new_lift = min(max(robot.torso_lift + action.delta, world.model.torso_lift_range[0]),
                       world.model.torso_lift_range[1])
        frames = _joint_frames(world, robot.arm_joints["left"], robot.arm_joints["right"],
                               new_lift)
        world = world.with_in_flight(InFlight(frames))
        return world, ActionResult.of(
            OutcomeLabel.SUCCESS, f"torso lift moving to {new_lift:.2f} m", len(frames)
        )

    return _apply_interaction(world, action, difficulty, table)


_TABLE_CACHE: Optional[OutcomeTable] = None


def _default_table() -> OutcomeTable:
    global _TABLE_CACHE
    if _TABLE_CACHE is None:
        _TABLE_CACHE = load_outcome_table()
    return _TABLE_CACHE


def _cell_reaches(world: WorldState, cell: Cell, obj: SceneObject) -> bool:
    """Could some arm reach the grasp point from this cell at some lift?"""
    from .kinematics import lifts_reaching

    model = world.model
    cx, cy = world.grid.center(cell)
    ox, oy, oz = obj.pose.position
    heading = math.atan2(oy - cy, ox - cx)
    rel = heading_matrix(heading).T @ np.array([ox - cx, oy - cy, oz])
    return any(bool(lifts_reaching(model, arm, rel)) for arm in ("left", "right"))


def _apply_navigate(world: WorldState, action: NavigateTo):
    if isinstance(action.target, str):
        obj = world.object(action.target)
        candidates = interaction_cells(world, action.target)
        # prefer cells the arms can actually work from; fall back to plain
        # adjacency so navigation still gets the robot close
        feasible = [c for c in candidates if _cell_reaches(world, c, obj)]
        best_path = None
        for cell in feasible or candidates:
            path = plan_navigation(world, cell)
            if path is not None and (best_path is None or len(path) < len(best_path)):
                best_path = path
        if best_path is None:
            return _fail(
                world, OutcomeLabel.UNREACHABLE,
                f"no path to an interaction cell beside {action.target}",
            )
        ox, oy, _ = obj.pose.position
        if best_path:
            end = world.grid.center(best_path[-1])
        else:
            end = (world.robot.base[0], world.robot.base[1])
        final_heading = math.atan2(oy - end[1], ox - end[0])
        path = best_path
        label = action.target
    else:
        if not world.grid.in_bounds(action.target):
            return _fail(world, OutcomeLabel.UNREACHABLE, f"cell {action.target} out of bounds")
        path = plan_navigation(world, action.target)
        if path is None:
            return _fail(world, OutcomeLabel.UNREACHABLE, f"no path to cell {action.target}")
        final_heading = world.robot.base[2]
        if path:
            prev = world.grid.center(path[-2]) if len(path) > 1 else (
                world.robot.base[0], world.robot.base[1])
            end = world.grid.center(path[-1])
            final_heading = math.atan2(end[1] - prev[1], end[0] - prev[0])
        label = f"cell {action.target}"
    if not path:
        robot = replace(world.robot, base=(world.robot.base[0], world.robot.base[1],
                                           final_heading))
        return world.with_robot(robot), ActionResult.of(
            OutcomeLabel.SUCCESS, f"already beside {label}", 0
        )
    frames = _nav_frames(world, path, final_heading)
    world = world.with_in_flight(InFlight(frames))
    return world, ActionResult.of(
        OutcomeLabel.SUCCESS, f"moving to {label} ({len(path)} cells)", len(frames)
    )


_FAILURE_PHRASES = {
    OutcomeLabel.BREAK: "{target} broke",
    OutcomeLabel.SPILL: "{target} spilled its contents",
    OutcomeLabel.DROP: "{target} slipped and dropped",
    OutcomeLabel.SLIP_OPEN: "grip slipped on {target}",
}


def _apply_interaction(world, action, difficulty: Optional[Difficulty], table: OutcomeTable):
    robot = world.robot

    if isinstance(action, LiftTogether):
        target_id = action.object
        for arm in ("left", "right"):
            if check_reachability(world, target_id, arm) is None:
                return _fail(
                    world, OutcomeLabel.UNREACHABLE,
                    f"{target_id} is out of the {arm} arm's reach",
                )
        solved = _solve_bimanual(world, target_id)
        if solved is None:
            return _fail(
                world, OutcomeLabel.UNREACHABLE,
                f"no balanced bimanual grasp found for {target_id}",
            )
    elif isinstance(action, HoldAndOpen):
        target_id = action.container
        if action.held == action.container:
            arm = "right"
        else:
            arm = robot.free_arms()[0]
        if check_reachability(world, target_id, arm) is None:
            return _fail(
                world, OutcomeLabel.UNREACHABLE,
                f"{target_id} is out of the {arm} arm's reach",
            )
        solved = _solve_arm(world, arm, grasp_point(world.object(target_id)))
        if solved is None:
            return _fail(world, OutcomeLabel.UNREACHABLE, f"cannot reach {target_id}")
    else:
        arm = action.arm
        if isinstance(action, Place):
            target_id = action.receptacle
        elif isinstance(action, Pour):
            target_id = action.target
        else:
            target_id = action.object
        if check_reachability(world, target_id, arm) is None:
            return _fail(
                world, OutcomeLabel.UNREACHABLE,
                f"{target_id} is out of the {arm} arm's reach",
            )
        point = grasp_point(world.object(target_id))
        if isinstance(action, Pour):
            point = point + np.array([0.0, 0.0, 0.1])  # pour from above
        solved = _solve_arm(world, arm, point)
        if solved is None:
            return _fail(world, OutcomeLabel.UNREACHABLE, f"cannot reach {target_id}")

    # contingency draw: the manipulated object's properties drive the table
    props_source = action.container if isinstance(action, HoldAndOpen) else action.object
    props = world.object(props_source).properties
    dist = table.lookup(action.kind, props)
    if difficulty is not None:
        dist = scale_for_difficulty(dist, difficulty)
    outcome, rng_state = sample_outcome(dist, world.rng_state)
    world = world.with_rng(rng_state)

    world = apply_outcome(world, outcome, action)
    ql, qr, lift = solved
    frames = _joint_frames(world, ql, qr, lift)
    world = world.with_in_flight(InFlight(frames))

    if outcome == OutcomeLabel.SUCCESS:
        feedback = _success_phrase(action)
    else:
        feedback = _FAILURE_PHRASES[outcome].format(target=props_source)
    return world, ActionResult.of(outcome, feedback, len(frames))


def _success_phrase(action: Action) -> str:
    if isinstance(action, PickUp):
        return f"picked up {action.object} with the {action.arm} arm"
    if isinstance(action, Place):
        return f"placed {action.object} in {action.receptacle}"
    if isinstance(action, Open):
        return f"opened {action.object}"
    if isinstance(action, Close):
        return f"closed {action.object}"
    if isinstance(action, Pour):
        return f"poured {action.object} into {action.target}"
    if isinstance(action, LiftTogether):
        return f"lifted {action.object} with both arms"
    if isinstance(action, HoldAndOpen):
        return f"opened {action.container} while holding {action.held}"
    return "done"


def run_action(
    world: WorldState,
    action: Action,
    difficulty: Optional[Difficulty] = None,
    table: Optional[OutcomeTable] = None,
) -> tuple[WorldState, ActionResult]:
    """apply_action plus ticks until the scheduled motion completes."""
    world, result = apply_action(world, action, difficulty, table)
    world = run_ticks_to_completion(world)
    return world, result


# ---------------------------------------------------------------------------
# Observation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VisibleObject:
    id: str
    category: str
    rel_pos: tuple[float, float, float]
    cell: Cell
    properties: tuple[str, ...]
    state: tuple[str, ...]
    parent: Optional[str]
    held_by: Optional[str]
    distance: float
    position: tuple[float, float, float]
    mass: float


@dataclass(frozen=True)
class ObservationFrame:
    token_grid: tuple[tuple[int, ...], ...]
    robot_centroid: Cell  # (x, y) within the crop
    visible_objects: tuple[VisibleObject, ...]
    proprio: tuple[float, ...]
    tick: int
    crop_origin: Cell  # world cell of crop (0, 0)


def _bresenham(a: Cell, b: Cell) -> list[Cell]:
    x0, y0 = a
    x1, y1 = b
    cells = []
    dx, dy = abs(x1 - x0), abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx - dy
    x, y = x0, y0
    while (x, y) != (x1, y1):
        cells.append((x, y))
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy
    cells.append((x1, y1))
    return cells


def line_of_sight(world: WorldState, target_cell: Cell) -> bool:
    """True when no wall cell interrupts the grid ray to the target."""
    start = world.grid.cell_of(world.robot.base[0], world.robot.base[1])
    ray = _bresenham(start, target_cell)
    for cell in ray[1:-1]:
        if cell in world.grid.blocked:
            return False
    return True


def object_visible(world: WorldState, obj: SceneObject) -> bool:
    if obj.id in world.robot.held.values():
        return True
    parent = world.objects.get(obj.parent) if obj.parent else None
    if parent is not None and parent.has("openable") and not parent.is_in_state("open"):
        return False  # hidden inside a closed container
    bx, by, _ = world.robot.base
    ox, oy, _ = obj.pose.position
    if math.hypot(ox - bx, oy - by) > LINE_OF_SIGHT_RADIUS:
        return False
    return line_of_sight(world, world.grid.cell_of(ox, oy))


def observe(world: WorldState) -> ObservationFrame:
    """Ego-centric semantic observation; a pure function of the state."""
    grid = world.grid
    robot = world.robot
    half = int(math.ceil(LINE_OF_SIGHT_RADIUS / grid.cell_size))
    center = grid.cell_of(robot.base[0], robot.base[1])
    origin = (center[0] - half, center[1] - half)
    size = 2 * half + 1

    tokens = [[TOKEN_EMPTY] * size for _ in range(size)]
    blocked = world.blocked_cells()
    for row in range(size):
        for col in range(size):
            cell = (origin[0] + col, origin[1] + row)
            if not grid.in_bounds(cell) or cell in blocked:
                tokens[row][col] = TOKEN_BLOCKED

    visible = []
    heading = robot.base[2]
    inv_heading = heading_matrix(heading).T
    for oid in sorted(world.objects):
        obj = world.objects[oid]
        if not object_visible(world, obj):
            continue
        ox, oy, oz = obj.pose.position
        cell = grid.cell_of(ox, oy)
        rel = inv_heading @ np.array([ox - robot.base[0], oy - robot.base[1], oz])
        held_by_arms = robot.holds(oid)
        held_by = None
        if len(held_by_arms) == 2:
            held_by = "both"
        elif held_by_arms:
            held_by = held_by_arms[0]
        visible.append(
            VisibleObject(
                id=oid,
                category=obj.category,
                rel_pos=tuple(float(v) for v in rel),
                cell=cell,
                properties=tuple(sorted(obj.properties)),
                state=tuple(sorted(obj.state)),
                parent=obj.parent,
                held_by=held_by,
                distance=float(math.hypot(ox - robot.base[0], oy - robot.base[1])),
                position=obj.pose.position,
                mass=obj.mass,
            )
        )
        col, row = cell[0] - origin[0], cell[1] - origin[1]
        if 0 <= row < size and 0 <= col < size:
            tokens[row][col] = CATEGORY_TOKENS.get(obj.category, TOKEN_UNKNOWN)

    tokens[half][half] = TOKEN_ROBOT
    proprio = (
        robot.base[0], robot.base[1], robot.base[2], robot.torso_lift,
        *robot.arm_joints["left"], *robot.arm_joints["right"],
        1.0 if robot.held["left"] else 0.0,
        1.0 if robot.held["right"] else 0.0,
    )
    return ObservationFrame(
        token_grid=tuple(tuple(r) for r in tokens),
        robot_centroid=(half, half),
        visible_objects=tuple(visible),
        proprio=tuple(float(v) for v in proprio),
        tick=world.tick,
        crop_origin=origin,
    )
