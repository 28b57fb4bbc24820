"""Stochastic action outcomes.

Each interaction action maps to a distribution over labeled outcomes rather
than a guaranteed effect. The shipped table keys distributions by
(action kind, property set); the most specific entry whose property set is
contained in the target object's properties wins, and anything unlisted
succeeds deterministically.

Difficulty rescaling pins the success probability to the level's multiplier
(1.0 / 0.5 / 0.2) and spreads the remaining mass over the failure labels in
proportion to their original ratios. A success-only distribution gains a
generic ``drop`` failure so that every difficulty level means what it says
for every interaction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .exceptions import ArgumentError, SchemaError
from .geometry import Pose
from .kinematics import arm_fk_torso, load_robot_model
from .rng import next_float
from .scene import WorldState

PROB_TOL = 1e-9


class OutcomeLabel(str, Enum):
    SUCCESS = "success"
    BREAK = "break"
    SPILL = "spill"
    DROP = "drop"
    SLIP_OPEN = "slip_open"
    UNREACHABLE = "unreachable"
    NO_OP = "no_op"


# deterministic results, never drawn from a distribution
_UNSAMPLED = {OutcomeLabel.UNREACHABLE, OutcomeLabel.NO_OP}


class Difficulty(str, Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"

    @property
    def success_multiplier(self) -> float:
        return {"easy": 1.0, "medium": 0.5, "hard": 0.2}[self.value]


@dataclass(frozen=True)
class OutcomeDistribution:
    entries: tuple[tuple[OutcomeLabel, float], ...]

    def __post_init__(self):
        labels = [label for label, _ in self.entries]
        if len(set(labels)) != len(labels):
            raise ArgumentError("outcome labels must be distinct")
        if labels.count(OutcomeLabel.SUCCESS) != 1:
            raise ArgumentError("distribution must contain success exactly once")
        for label, p in self.entries:
            if label in _UNSAMPLED:
                raise ArgumentError(f"{label.value} cannot appear in a sampled distribution")
            if not 0.0 <= p <= 1.0:
                raise ArgumentError(f"probability {p} for {label.value} outside [0, 1]")
        total = math.fsum(p for _, p in self.entries)
        if abs(total - 1.0) > PROB_TOL:
            raise ArgumentError(f"probabilities sum to {total}, expected 1")

    def probability(self, label: OutcomeLabel) -> float:
        for entry_label, p in self.entries:
            if entry_label == label:
                return p
        return 0.0

    @property
    def success_probability(self) -> float:
        return self.probability(OutcomeLabel.SUCCESS)


CERTAIN_SUCCESS = OutcomeDistribution(((OutcomeLabel.SUCCESS, 1.0),))


@dataclass(frozen=True)
class TableEntry:
    action_kind: str
    properties: frozenset[str]
    distribution: OutcomeDistribution


class OutcomeTable:
    """Lookup from (action kind, object properties) to a distribution."""

    def __init__(self, entries: Sequence[TableEntry]):
        self.entries = list(entries)

    def lookup(self, action_kind: str, properties: frozenset[str]) -> OutcomeDistribution:
        best: Optional[TableEntry] = None
        for entry in self.entries:
            if entry.action_kind != action_kind:
                continue
            if not entry.properties <= properties:
                continue
            if best is None or len(entry.properties) > len(best.properties):
                best = entry
        return best.distribution if best is not None else CERTAIN_SUCCESS


def outcome_table_from_list(doc: list) -> OutcomeTable:
    entries = []
    for i, item in enumerate(doc):
        try:
            dist = OutcomeDistribution(
                tuple(
                    (OutcomeLabel(o["label"]), float(o["p"])) for o in item["outcomes"]
                )
            )
        except (KeyError, ValueError, ArgumentError) as exc:
            raise SchemaError(str(exc), f"$[{i}].outcomes") from exc
        entries.append(
            TableEntry(
                action_kind=item["action"],
                properties=frozenset(item.get("properties", [])),
                distribution=dist,
            )
        )
    return OutcomeTable(entries)


def load_outcome_table(path: Optional[str] = None) -> OutcomeTable:
    """Load an outcome table, defaulting to the packaged one."""
    if path is None:
        text = resources.files("bimsim").joinpath("data/outcome_table.json").read_text("utf-8")
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}", "$") from exc
    if not isinstance(doc, list):
        raise SchemaError("outcome table must be a JSON array", "$")
    return outcome_table_from_list(doc)


def scale_for_difficulty(dist: OutcomeDistribution, d: Difficulty) -> OutcomeDistribution:
    """Re-pin the success probability to the difficulty multiplier.

    Failure mass is redistributed proportionally to the original failure
    ratios; a distribution with no failure labels gains a generic drop.
    """
    m = min(1.0, d.success_multiplier)
    failures = [(label, p) for label, p in dist.entries if label != OutcomeLabel.SUCCESS]
    failure_mass = math.fsum(p for _, p in failures)
    entries: list[tuple[OutcomeLabel, float]] = [(OutcomeLabel.SUCCESS, m)]
    if failure_mass > 0.0:
        for label, p in failures:
            entries.append((label, (1.0 - m) * (p / failure_mass)))
    elif m < 1.0:
        entries.append((OutcomeLabel.DROP, 1.0 - m))
    else:
        entries.extend(failures)  # keep explicit zero-probability labels, if any
    # preserve the original label order where possible
    order = {label: i for i, (label, _) in enumerate(dist.entries)}
    entries.sort(key=lambda e: order.get(e[0], len(order)))
    return OutcomeDistribution(tuple(entries))


def sample_outcome(dist: OutcomeDistribution, rng_state: int) -> tuple[OutcomeLabel, int]:
    """Inverse-CDF draw in listed order; always consumes exactly one draw."""
    u, rng_state = next_float(rng_state)
    acc = 0.0
    for label, p in dist.entries:
        acc += p
        if u < acc:
            return label, rng_state
    return dist.entries[-1][0], rng_state


# ---------------------------------------------------------------------------
# Outcome effects
# ---------------------------------------------------------------------------


def _ee_ground_position(world: WorldState, arm: str) -> tuple[float, float]:
    model = load_robot_model(world.robot.embodiment)
    _, pos = arm_fk_torso(model, arm, world.robot.arm_joints[arm], world.robot.torso_lift)
    bx, by, heading = world.robot.base
    c, s = math.cos(heading), math.sin(heading)
    return (bx + c * pos[0] - s * pos[1], by + s * pos[0] + c * pos[1])


def _release(world: WorldState, object_id: str) -> WorldState:
    held = dict(world.robot.held)
    changed = False
    for arm, oid in held.items():
        if oid == object_id:
            held[arm] = None
            changed = True
    if not changed:
        return world
    from dataclasses import replace

    return world.with_robot(replace(world.robot, held=held))


def apply_outcome(world: WorldState, outcome: OutcomeLabel, action) -> WorldState:
    """Apply a sampled outcome's state edits (pure; no tick bookkeeping).

    Nominal (success) effects are applied by the action executor in
    ``world.py``; this handles the failure-label edits shared by all
    actions: break, spill, drop.
    """
    from .world import nominal_effect  # deferred; world builds on this module

    if outcome == OutcomeLabel.SUCCESS:
        return nominal_effect(world, action)

    target_id = getattr(action, "object", None)
    if outcome == OutcomeLabel.BREAK and target_id is not None:
        obj = world.object(target_id)
        x, y, _ = obj.pose.position
        broken = obj.with_state(add=("broken",)).with_parent(None).with_pose(
            Pose((x, y, 0.0), obj.pose.orientation)
        )
        return _release(world.with_object(broken), target_id)
    if outcome == OutcomeLabel.SPILL and target_id is not None:
        obj = world.object(target_id)
        return world.with_object(obj.with_state(add=("spilled",), remove=("filled",)))
    if outcome == OutcomeLabel.DROP:
        arm = getattr(action, "arm", None) or "right"
        drop_id = target_id if target_id in world.objects else world.robot.held.get(arm)
        if drop_id is None:
            return world
        gx, gy = _ee_ground_position(world, arm if arm in ("left", "right") else "right")
        obj = world.object(drop_id)
        dropped = obj.with_parent(None).with_pose(Pose((gx, gy, 0.0), obj.pose.orientation))
        return _release(world.with_object(dropped), drop_id)
    # slip_open and other failures leave object state untouched
    return world


def rng_probe(rng_state: int, n: int) -> list[float]:
    """First n uniform draws from a state; test/debug helper."""
    out = []
    for _ in range(n):
        u, rng_state = next_float(rng_state)
        out.append(u)
    return out
