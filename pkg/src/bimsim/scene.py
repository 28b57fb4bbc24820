"""World state: scene objects, robot, occupancy grid, digests, scene loading.

State values are frozen dataclasses built from plain tuples so that a state
is a self-contained value: cheap to copy, safe to hand across threads, and
digestible byte-for-byte. All mutation goes through ``replace``-style
helpers that return new states.

The state digest is the first 64 bits (16 hex chars) of SHA-256 over a
canonical JSON serialization: keys sorted, floats rendered with ``repr``
(shortest round-trip form), objects ordered by id. Replay determinism tests
and the wire protocol both rely on it.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from typing import Iterable, Optional

import jsonschema

from .exceptions import IntegrityError, SchemaError
from .geometry import Pose
from .kinematics import RobotModel, load_robot_model
from .rng import seed_state

Cell = tuple[int, int]

# Object categories that occupy their grid cell for navigation purposes.
BLOCKING_CATEGORIES = frozenset(
    {"table", "sofa", "bed", "fridge", "counter", "shelf", "sink", "cabinet", "drawer"}
)

PROPERTY_FLAGS = ("pickupable", "pourable", "breakable", "openable", "receptacle", "heavy")
STATE_FLAGS = ("open", "closed", "broken", "spilled", "filled")

END_EFFECTORS = {"h1": "dexterous_hand", "x1": "parallel_gripper"}


@dataclass(frozen=True)
class SceneObject:
    id: str
    category: str
    pose: Pose
    mass: float
    grasp_width: float
    properties: frozenset[str]
    state: frozenset[str]
    parent: Optional[str] = None
    blocks: bool = False

    def has(self, prop: str) -> bool:
        return prop in self.properties

    def is_in_state(self, flag: str) -> bool:
        return flag in self.state

    @property
    def pickupable_now(self) -> bool:
        return "pickupable" in self.properties and "broken" not in self.state

    def with_state(self, add: Iterable[str] = (), remove: Iterable[str] = ()) -> "SceneObject":
        return replace(self, state=frozenset((self.state | set(add)) - set(remove)))

    def with_pose(self, pose: Pose) -> "SceneObject":
        return replace(self, pose=pose)

    def with_parent(self, parent: Optional[str]) -> "SceneObject":
        return replace(self, parent=parent)


@dataclass(frozen=True)
class RobotState:
    embodiment: str
    base: tuple[float, float, float]  # x, y, heading
    torso_lift: float
    arm_joints: dict[str, tuple[float, ...]]
    held: dict[str, Optional[str]]
    end_effector: str

    def holds(self, object_id: str) -> list[str]:
        return [arm for arm, oid in self.held.items() if oid == object_id]

    def free_arms(self) -> list[str]:
        return [arm for arm in ("left", "right") if self.held[arm] is None]


@dataclass(frozen=True)
class Grid:
    width: int
    height: int
    cell_size: float
    blocked: frozenset[Cell]

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def cell_of(self, x: float, y: float) -> Cell:
        return (int(math.floor(x / self.cell_size)), int(math.floor(y / self.cell_size)))

    def center(self, cell: Cell) -> tuple[float, float]:
        return ((cell[0] + 0.5) * self.cell_size, (cell[1] + 0.5) * self.cell_size)


@dataclass(frozen=True)
class InFlight:
    """Scheduled tick-by-tick motion: base cells and/or a joint trajectory."""

    frames: tuple[tuple, ...]  # each: (base(x, y, heading), lift, qL, qR)
    index: int = 0

    @property
    def remaining(self) -> int:
        return len(self.frames) - self.index


@dataclass(frozen=True)
class WorldState:
    objects: dict[str, SceneObject]
    robot: RobotState
    grid: Grid
    tick: int = 0
    rng_state: int = 0
    in_flight: Optional[InFlight] = None
    scene_id: str = ""

    def object(self, object_id: str) -> SceneObject:
        try:
            return self.objects[object_id]
        except KeyError:
            raise IntegrityError(f"unknown object id {object_id!r}") from None

    def with_object(self, obj: SceneObject) -> "WorldState":
        objects = dict(self.objects)
        objects[obj.id] = obj
        return replace(self, objects=objects)

    def with_objects(self, objs: Iterable[SceneObject]) -> "WorldState":
        objects = dict(self.objects)
        for obj in objs:
            objects[obj.id] = obj
        return replace(self, objects=objects)

    def with_robot(self, robot: RobotState) -> "WorldState":
        return replace(self, robot=robot)

    def advanced(self, ticks: int = 1) -> "WorldState":
        return replace(self, tick=self.tick + ticks)

    def with_rng(self, rng_state: int) -> "WorldState":
        return replace(self, rng_state=rng_state)

    def with_in_flight(self, in_flight: Optional[InFlight]) -> "WorldState":
        return replace(self, in_flight=in_flight)

    @property
    def model(self) -> RobotModel:
        return load_robot_model(self.robot.embodiment)

    def blocked_cells(self) -> frozenset[Cell]:
        """Static walls plus cells occupied by blocking, non-held objects."""
        held_ids = {oid for oid in self.robot.held.values() if oid}
        cells = set(self.grid.blocked)
        for obj in self.objects.values():
            if obj.blocks and obj.id not in held_ids:
                cells.add(self.grid.cell_of(obj.pose.position[0], obj.pose.position[1]))
        return frozenset(cells)


# ---------------------------------------------------------------------------
# Canonical serialization and digest
# ---------------------------------------------------------------------------


def canonical_dict(world: WorldState) -> dict:
    objs = []
    for oid in sorted(world.objects):
        o = world.objects[oid]
        objs.append(
            {
                "id": o.id,
                "category": o.category,
                "position": list(o.pose.position),
                "orientation": list(o.pose.orientation),
                "mass": o.mass,
                "grasp_width": o.grasp_width,
                "properties": sorted(o.properties),
                "state": sorted(o.state),
                "parent": o.parent,
                "blocks": o.blocks,
            }
        )
    r = world.robot
    in_flight = None
    if world.in_flight is not None:
        in_flight = {
            "index": world.in_flight.index,
            "frames": [
                [list(base), lift, list(ql), list(qr)]
                for base, lift, ql, qr in world.in_flight.frames
            ],
        }
    return {
        "scene": world.scene_id,
        "tick": world.tick,
        "rng": world.rng_state,
        "grid": {
            "width": world.grid.width,
            "height": world.grid.height,
            "cell_size": world.grid.cell_size,
            "blocked": sorted(world.grid.blocked),
        },
        "robot": {
            "embodiment": r.embodiment,
            "base": list(r.base),
            "torso_lift": r.torso_lift,
            "arm_joints": {arm: list(q) for arm, q in sorted(r.arm_joints.items())},
            "held": {arm: r.held[arm] for arm in sorted(r.held)},
            "end_effector": r.end_effector,
        },
        "objects": objs,
        "in_flight": in_flight,
    }


def state_digest(world: WorldState) -> str:
    """64-bit hex digest of the canonical state serialization."""
    payload = json.dumps(canonical_dict(world), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Scene loading
# ---------------------------------------------------------------------------


def _load_schema(name: str) -> dict:
    ref = resources.files("bimsim").joinpath(f"data/schemas/{name}")
    return json.loads(ref.read_text(encoding="utf-8"))


_SCENE_SCHEMA: Optional[dict] = None


def scene_schema() -> dict:
    global _SCENE_SCHEMA
    if _SCENE_SCHEMA is None:
        _SCENE_SCHEMA = _load_schema("scene.schema.json")
    return _SCENE_SCHEMA


def validate_scene_dict(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(scene_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "$" + "".join(
            f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path
        )
        raise SchemaError(err.message, path)


def scene_from_dict(
    doc: dict,
    seed: Optional[int] = None,
    embodiment: Optional[str] = None,
    scene_id: str = "",
) -> WorldState:
    """Build a WorldState from a parsed scene document.

    ``seed`` overrides the scene's baked-in seed; ``embodiment`` re-bodies
    the scene with a different robot. The ``heavy`` property is derived from
    object mass versus the embodiment's per-arm payload, never trusted from
    the file.
    """
    validate_scene_dict(doc)
    g = doc["grid"]
    grid = Grid(
        width=int(g["width"]),
        height=int(g["height"]),
        cell_size=float(g["cell_size"]),
        blocked=frozenset((int(c[0]), int(c[1])) for c in g.get("blocked_cells", [])),
    )
    emb = embodiment or doc["robot"]["embodiment"]
    model = load_robot_model(emb)
    lift = float(doc["robot"].get("torso_lift", model.rest_lift))
    lo, hi = model.torso_lift_range
    if not lo <= lift <= hi:
        raise IntegrityError(f"torso_lift {lift} outside range [{lo}, {hi}]")
    robot = RobotState(
        embodiment=emb,
        base=tuple(float(v) for v in doc["robot"]["base"]),
        torso_lift=lift,
        arm_joints={
            "left": tuple(model.left.rest),
            "right": tuple(model.right.rest),
        },
        held={"left": None, "right": None},
        end_effector=END_EFFECTORS[emb],
    )
    objects: dict[str, SceneObject] = {}
    for entry in doc["objects"]:
        oid = entry["id"]
        if oid in objects:
            raise IntegrityError(f"duplicate object id {oid!r}")
        props = set(entry.get("properties", [])) - {"heavy"}
        mass = float(entry.get("mass", 0.1))
        if mass > model.payload_limit:
            props.add("heavy")
        pose = Pose(
            position=tuple(float(v) for v in entry["position"]),
            orientation=tuple(float(v) for v in entry.get("orientation", (1.0, 0.0, 0.0, 0.0))),
        )
        pose.validate()
        category = entry["category"]
        objects[oid] = SceneObject(
            id=oid,
            category=category,
            pose=pose,
            mass=mass,
            grasp_width=float(entry.get("grasp_width", 0.08)),
            properties=frozenset(props),
            state=frozenset(entry.get("state", [])),
            parent=entry.get("parent"),
            blocks=bool(entry.get("blocks", category in BLOCKING_CATEGORIES)),
        )
    # referential integrity
    for obj in objects.values():
        if obj.parent is not None:
            if obj.parent not in objects:
                raise IntegrityError(
                    f"object {obj.id!r} parented to nonexistent {obj.parent!r}"
                )
            if "receptacle" not in objects[obj.parent].properties:
                raise IntegrityError(
                    f"object {obj.id!r} parented to non-receptacle {obj.parent!r}"
                )
        cell = grid.cell_of(obj.pose.position[0], obj.pose.position[1])
        if not grid.in_bounds(cell):
            raise IntegrityError(f"object {obj.id!r} lies outside the grid")
        for flag in obj.state:
            if flag not in STATE_FLAGS:
                raise IntegrityError(f"object {obj.id!r} has unknown state flag {flag!r}")
    base_cell = grid.cell_of(robot.base[0], robot.base[1])
    if not grid.in_bounds(base_cell):
        raise IntegrityError("robot base lies outside the grid")
    effective_seed = doc["seed"] if seed is None else seed
    return WorldState(
        objects=objects,
        robot=robot,
        grid=grid,
        tick=0,
        rng_state=seed_state(int(effective_seed)),
        in_flight=None,
        scene_id=scene_id or doc.get("name", ""),
    )


def load_scene(
    path: str,
    seed: Optional[int] = None,
    embodiment: Optional[str] = None,
) -> WorldState:
    """Load and validate a scene file into a fresh WorldState (tick 0)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"not valid JSON: {exc}", "$") from exc
    scene_id = doc.get("name") or path.rsplit("/", 1)[-1].replace(".scene.json", "")
    return scene_from_dict(doc, seed=seed, embodiment=embodiment, scene_id=scene_id)
