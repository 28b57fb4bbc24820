"""Command-line entry points: serve, serve-http, eval, gen-tasks, train-quantizer."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .contingency import Difficulty
from .exceptions import SimError


@click.group()
def main():
    """Bimanual humanoid household simulator and benchmark harness."""


def _config(scenes, tasks, outcome_table, slow_motion=False):
    from .protocol import load_config

    return load_config(
        scenes_dir=scenes,
        tasks_dir=tasks,
        outcome_table_path=outcome_table,
        slow_motion=slow_motion,
    )


@main.command()
@click.option("--port", default=7400, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--scenes", type=click.Path(exists=True, file_okay=False), default=None,
              help="Scene directory (defaults to packaged scenes).")
@click.option("--tasks", type=click.Path(exists=True, file_okay=False), default=None,
              help="Task directory (defaults to packaged tasks).")
@click.option("--outcome-table", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Outcome table JSON (defaults to the packaged table).")
@click.option("--slow-motion", is_flag=True,
              help="Steps schedule motion without advancing ticks; use 'tick' requests.")
def serve(port, host, scenes, tasks, outcome_table, slow_motion):
    """Run the newline-delimited JSON protocol server over TCP."""
    from .tcp_server import serve_forever

    config = _config(scenes, tasks, outcome_table, slow_motion)
    serve_forever(config, host, port)


@main.command("serve-http")
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--scenes", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--tasks", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--outcome-table", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--slow-motion", is_flag=True)
def serve_http(port, host, scenes, tasks, outcome_table, slow_motion):
    """Run the FastAPI HTTP service wrapping the same session engine."""
    import uvicorn

    from .service import create_app

    app = create_app(_config(scenes, tasks, outcome_table, slow_motion))
    uvicorn.run(app, host=host, port=port, log_level="info")


@main.command("eval")
@click.option("--suite", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Suite manifest JSON; defaults to all packaged tasks.")
@click.option("--robot", type=click.Choice(["h1", "x1"]), default=None,
              help="Override the scene-pinned embodiment.")
@click.option("--difficulty", type=click.Choice(["easy", "medium", "hard"]), default="easy",
              show_default=True)
@click.option("--planner", default="oracle-dual", show_default=True,
              help="oracle-dual | oracle-single | random | remote:<host:port>")
@click.option("--trials", default=50, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Directory for reports.csv and suite.json.")
@click.option("--scenes", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--tasks", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--outcome-table", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--server", default=None,
              help="host:port of a protocol server; episodes run over the wire.")
@click.option("--workers", default=1, show_default=True, type=int)
def eval_command(suite, robot, difficulty, planner, trials, seed, out, scenes, tasks,
                 outcome_table, server, workers):
    """Run trial batches and report success rates and failure histograms."""
    from .harness import (
        build_suite_report,
        config_digest_of,
        make_planner_factory,
        run_trials,
        success_rate,
        write_reports_csv,
        write_suite_json,
    )
    from .suite import load_suite

    try:
        config = _config(scenes, tasks, outcome_table)
        if suite is not None:
            task_list, _ = load_suite(suite)
        else:
            task_list = [config.tasks[tid] for tid in sorted(config.tasks)]
        for task in task_list:
            if task.scene not in config.scenes:
                raise SimError(f"task {task.id} references unknown scene {task.scene}")
        factory = make_planner_factory(planner)
        difficulty_value = Difficulty(difficulty)
        server_address = None
        if server is not None:
            host, _, port = server.rpartition(":")
            server_address = (host or "127.0.0.1", int(port))

        all_reports = []
        tasks_by_id = {}
        for task in task_list:
            tasks_by_id[task.id] = task
            reports = run_trials(
                config, task, factory, trials, seed,
                difficulty=difficulty_value, embodiment=robot,
                workers=workers, server_address=server_address,
            )
            rate = success_rate(reports)
            click.echo(f"{task.id:36s} {task.category.value:14s} "
                       f"success {rate:6.1%} over {len(reports)} trials")
            all_reports.extend(reports)

        digest = config_digest_of({
            "tasks": sorted(tasks_by_id),
            "planner": planner,
            "difficulty": difficulty,
            "trials": trials,
            "seed": seed,
            "robot": robot,
        })
        suite_report = build_suite_report(all_reports, tasks_by_id, digest)
        click.echo(f"per-category rates: {suite_report.per_category_rates}")
        click.echo(f"failure histogram (nav/body/logical): {suite_report.failure_histogram}")
        if out is not None:
            out_dir = Path(out)
            out_dir.mkdir(parents=True, exist_ok=True)
            write_reports_csv(str(out_dir / "reports.csv"), all_reports)
            write_suite_json(str(out_dir / "suite.json"), suite_report)
            click.echo(f"wrote {out_dir / 'reports.csv'} and {out_dir / 'suite.json'}")
    except SimError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


@main.command("gen-tasks")
@click.option("--scenes", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--outcome-table", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--singles", default=5, show_default=True, type=int)
@click.option("--optional", "optional_", default=2, show_default=True, type=int)
@click.option("--essential", default=2, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def gen_tasks(scenes, outcome_table, singles, optional_, essential, seed, out):
    """Generate a solvable task suite and write it with a manifest."""
    from .suite import generate_task_suite, save_suite

    try:
        config = _config(scenes, None, outcome_table)
        suite = generate_task_suite(
            config,
            {"single_arm": singles, "dual_optional": optional_, "dual_essential": essential},
            seed,
        )
        manifest = save_suite(out, suite, seed)
        click.echo(f"wrote {len(suite)} tasks; manifest at {manifest}")
    except SimError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


@main.command("train-quantizer")
@click.option("--scenes", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--tasks", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--episodes", default=8, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--codes", default=64, show_default=True, type=int)
@click.option("--latent", default=8, show_default=True, type=int)
@click.option("--epochs", default=200, show_default=True, type=int)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def train_quantizer_command(scenes, tasks, episodes, seed, codes, latent, epochs, out):
    """Train the motion quantizer on oracle-episode trajectories."""
    from .features import save_quantizer, train_quantizer
    from .motion_data import collect_motion_features

    try:
        config = _config(scenes, tasks, None)
        dataset = collect_motion_features(config, episodes, seed)
        ae, cb, history = train_quantizer(
            dataset, epochs=epochs, seed=seed, n_codes=codes, latent_dim=latent
        )
        save_quantizer(out, ae, cb)
        click.echo(
            f"trained on {len(dataset)} trajectories; "
            f"loss {history[0]:.4f} -> {history[-1]:.4f}; wrote {out}"
        )
    except SimError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
