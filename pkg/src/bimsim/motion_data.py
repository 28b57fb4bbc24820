"""Synthetic motion dataset: per-action joint trajectories from oracle runs.

Quantizer training data comes from the simulator's own scripted episodes:
each executed action contributes one motion feature holding the per-tick
joint positions (both arms plus torso lift) of its scheduled trajectory.
"""

from __future__ import annotations

import numpy as np

from .contingency import Difficulty
from .exceptions import ArgumentError
from .features import MotionFeature
from .protocol import Session, SimulatorConfig
from .world import observe, step_tick


def _joint_row(world) -> list[float]:
    robot = world.robot
    return [*robot.arm_joints["left"], *robot.arm_joints["right"], robot.torso_lift]


def collect_motion_features(
    config: SimulatorConfig,
    episodes: int,
    seed: int,
    difficulty: Difficulty = Difficulty.EASY,
    max_steps: int = 60,
) -> list[MotionFeature]:
    """Run oracle episodes, capturing one feature per executed trajectory."""
    from .harness import OraclePlanner

    if not config.tasks:
        raise ArgumentError("config has no tasks to collect motion from")
    task_ids = sorted(config.tasks)
    features: list[MotionFeature] = []
    for i in range(episodes):
        task = config.tasks[task_ids[i % len(task_ids)]]
        session = Session.for_task(
            task, config.scenes[task.scene], config.outcome_table,
            seed=seed + i, difficulty=difficulty, auto_tick=False,
        )
        planner = OraclePlanner(task, session.world.robot.embodiment, "dual_arm")
        for _ in range(max_steps):
            if session.status != "active":
                break
            action = planner.plan(observe(session.world))
            outcome = session.step(action)
            rows = [_joint_row(session.world)]
            while session.world.in_flight is not None:
                session.world = step_tick(session.world)
                rows.append(_joint_row(session.world))
            if len(rows) > 1:
                features.append(MotionFeature(frames=np.array(rows, dtype=float)))
            planner.notify(action, outcome.result)
            if outcome.done:
                break
    if not features:
        raise ArgumentError("no trajectories were recorded")
    return features
