from __future__ import annotations

import copy
import json
from importlib import resources

import pytest

from bimsim.contingency import load_outcome_table
from bimsim.protocol import SimulatorConfig, load_config


@pytest.fixture(scope="session")
def config() -> SimulatorConfig:
    return load_config()


@pytest.fixture(scope="session")
def kitchen_doc() -> dict:
    text = resources.files("bimsim").joinpath("data/scenes/kitchen_h1.scene.json").read_text()
    return json.loads(text)


@pytest.fixture()
def kitchen_doc_copy(kitchen_doc) -> dict:
    return copy.deepcopy(kitchen_doc)


def minimal_scene(embodiment: str = "x1", extra_objects=None, blocked=None) -> dict:
    """Small scene for focused world tests: robot, one table, one cup, a sink."""
    doc = {
        "name": "mini",
        "seed": 5,
        "grid": {
            "width": 12,
            "height": 12,
            "cell_size": 0.4,
            "blocked_cells": blocked or [],
        },
        "robot": {"embodiment": embodiment, "base": [1.0, 1.0, 0.0], "torso_lift": 0.0},
        "objects": [
            {
                "id": "table_1",
                "category": "table",
                "position": [2.6, 1.0, 0.75],
                "mass": 20.0,
                "properties": ["receptacle"],
            },
            {
                "id": "cup_1",
                "category": "cup",
                "position": [2.6, 1.0, 0.8],
                "mass": 0.3,
                "properties": ["pickupable", "pourable", "breakable"],
                "state": ["filled"],
                "parent": "table_1",
            },
            {
                "id": "sink_1",
                "category": "sink",
                "position": [3.8, 3.0, 0.75],
                "mass": 30.0,
                "properties": ["receptacle"],
            },
        ],
    }
    if extra_objects:
        doc["objects"].extend(copy.deepcopy(extra_objects))
    return doc


@pytest.fixture(scope="session")
def outcome_table():
    return load_outcome_table()
