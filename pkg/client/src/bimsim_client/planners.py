"""Planner scaffolding built purely on observation payloads.

``enumerate_actions`` derives the well-formed action set from what the
server reports (visible objects, their properties and states, which arms
hold what); ``random_planner`` picks uniformly. These serve as the default
baseline and as the extension point for richer planners: anything mapping
an observation dict to an action dict plugs into ``run_episode``.
"""

from __future__ import annotations

import random
from typing import Callable


def _held(observation: dict) -> dict:
    return dict(observation["robot"]["held"])


def enumerate_actions(observation: dict) -> list[dict]:
    """Well-formed actions under the current observation, in stable order."""
    held = _held(observation)
    free = [arm for arm in ("left", "right") if held[arm] is None]
    actions: list[dict] = [{"type": "done"}]
    objects = sorted(observation["visible_objects"], key=lambda v: v["id"])
    for v in objects:
        actions.append({"type": "navigate_to", "target": v["id"]})
        props = set(v["properties"])
        state = set(v["state"])
        pickable = "pickupable" in props and "broken" not in state and v["held_by"] is None
        if pickable and "heavy" not in props:
            for arm in free:
                actions.append({"type": "pick_up", "object": v["id"], "arm": arm})
        if pickable and "heavy" in props and len(free) == 2:
            actions.append({"type": "lift_together", "object": v["id"]})
        if "receptacle" in props and not ("openable" in props and "open" not in state):
            for arm, oid in held.items():
                if oid is not None:
                    actions.append({
                        "type": "place", "object": oid, "receptacle": v["id"], "arm": arm,
                    })
        if "openable" in props:
            if "open" in state:
                for arm in free:
                    actions.append({"type": "close", "object": v["id"], "arm": arm})
            else:
                if "heavy" not in props:
                    for arm in free:
                        actions.append({"type": "open", "object": v["id"], "arm": arm})
                for arm, oid in held.items():
                    other = "right" if arm == "left" else "left"
                    if oid is not None and held[other] is None:
                        actions.append({
                            "type": "hold_and_open", "held": oid, "container": v["id"],
                        })
                if len(free) == 2 and "heavy" in props:
                    actions.append({
                        "type": "hold_and_open", "held": v["id"], "container": v["id"],
                    })
    actions.append({"type": "adjust_height", "delta": 0.1})
    actions.append({"type": "adjust_height", "delta": -0.1})
    return actions


def random_planner(seed: int) -> Callable[[dict], dict]:
    """Uniform choice over the well-formed actions, reproducible by seed."""
    rng = random.Random(seed)

    def plan(observation: dict) -> dict:
        return rng.choice(enumerate_actions(observation))

    return plan
