#!/usr/bin/env python3
"""Drive the simulator's scripted oracle through the SDK.

Requires the simulator package (bimsim) installed locally: the oracle's
reach reasoning uses the robot models, which are part of the simulator,
not the wire protocol. Useful for checking that a server run matches the
in-process baseline.

    bimsim serve --port 7400
    python run_oracle.py --port 7400 --task kitchen-h1-cup-to-sink
"""

from __future__ import annotations

import argparse

from bimsim_client import ClientSession, run_episode


class OracleAdapter:
    """The simulator's scripted oracle speaking wire payloads."""

    def __init__(self, task: dict, embodiment: str):
        from bimsim.harness import OraclePlanner
        from bimsim.tasks import task_from_dict

        self._planner = OraclePlanner(task_from_dict(task), embodiment, "dual_arm")

    def __call__(self, observation: dict) -> dict:
        from bimsim.protocol import payload_to_frame
        from bimsim.world import action_to_dict

        return action_to_dict(self._planner.plan(payload_to_frame(observation)))

    def notify(self, action: dict, result: dict) -> None:
        from bimsim.contingency import OutcomeLabel
        from bimsim.world import ActionResult, action_from_dict

        self._planner.notify(
            action_from_dict(action),
            ActionResult(
                outcome=OutcomeLabel(result["outcome"]),
                feedback=result["feedback"],
                ticks_consumed=0,
                success=result["success"],
            ),
        )


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=7400)
    parser.add_argument("--task", default=None)
    parser.add_argument("--episodes", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--difficulty", default="easy",
                        choices=["easy", "medium", "hard"])
    args = parser.parse_args()

    with ClientSession(args.host, args.port) as probe:
        info = probe.info()
    task = next(
        (t for t in info["tasks"] if args.task in (None, t["id"])), None
    )
    if task is None:
        raise SystemExit(f"task {args.task!r} not on this server")

    with ClientSession(args.host, args.port) as probe2:
        embodiment = probe2.reset(task["id"], seed=args.seed)["robot"]["embodiment"]

    successes = 0
    for i in range(args.episodes):
        record = run_episode(
            OracleAdapter(task, embodiment),
            args.host, args.port, task["id"],
            seed=args.seed + i, difficulty=args.difficulty,
        )
        successes += record["success"]
        print(f"episode {i}: success={record['success']} steps={record['steps']}")
    print(f"{successes}/{args.episodes} episodes succeeded")


if __name__ == "__main__":
    main()
