#!/usr/bin/env python3
"""Drive episodes with the random baseline planner over the wire.

Start a simulator first, e.g.:

    bimsim serve --port 7400

then:

    python run_random.py --host 127.0.0.1 --port 7400 --episodes 10
"""

from __future__ import annotations

import argparse

from bimsim_client import ClientSession, run_episode
from bimsim_client.planners import random_planner


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=7400)
    parser.add_argument("--task", default=None, help="task id (default: first listed)")
    parser.add_argument("--episodes", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--difficulty", default="easy",
                        choices=["easy", "medium", "hard"])
    args = parser.parse_args()

    task_id = args.task
    if task_id is None:
        with ClientSession(args.host, args.port) as probe:
            task_id = probe.info()["tasks"][0]["id"]

    successes = 0
    for i in range(args.episodes):
        record = run_episode(
            random_planner(args.seed + i),
            args.host, args.port, task_id,
            seed=args.seed + i, difficulty=args.difficulty,
        )
        successes += record["success"]
        print(f"episode {i}: success={record['success']} steps={record['steps']}")
    print(f"{successes}/{args.episodes} episodes succeeded")


if __name__ == "__main__":
    main()
