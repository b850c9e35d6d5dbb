"""Command line: scenario runs, log replay, graph export, and the session service.

Exit codes for `run`: 0 converged, 1 aborted on persistent estimation failure,
2 finished without reaching the final threshold.
"""

from __future__ import annotations

import json
from pathlib import Path

import click

from viewservo.config import ScenarioConfig, load_scenario
from viewservo.exceptions import ServoFailure, ViewServoError
from viewservo.simulator import (
    build_graph,
    build_world,
    read_metrics_csv,
    replay_metrics,
    run_scenario,
)

DEFAULT_UI_DIR = Path("frontend") / "dist"


@click.group()
def main() -> None:
    """Homography-based view servoing under a programmable remote center of motion."""


def _load(config_path: str | None, seed: int | None, out_dir: str | None) -> ScenarioConfig:
    cfg = load_scenario(config_path) if config_path else ScenarioConfig()
    if seed is not None or out_dir is not None:
        cfg = cfg.with_overrides(seed=seed, out_dir=out_dir)
    return cfg


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Write metrics.csv/summary.json/graph.json here (overrides the config).")
def run(config: str, seed: int | None, out_dir: str | None) -> None:
    """Run one scenario config to completion and print its summary."""
    cfg = _load(config, seed, out_dir)
    try:
        artifacts = run_scenario(cfg)
    except ServoFailure as exc:
        click.echo(json.dumps({"converged": False, "failure": str(exc)}, indent=2))
        raise SystemExit(1)
    click.echo(json.dumps(artifacts.summary, indent=2, sort_keys=True))
    if not artifacts.summary["converged"]:
        raise SystemExit(2)


@main.command()
@click.argument("metrics", type=click.Path(exists=True, dir_okay=False))
@click.option("--final-threshold", type=float, default=None,
              help="MPD threshold used to flag the replay as converged.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Write the replay JSON here instead of stdout.")
def replay(metrics: str, final_threshold: float | None, out_path: str | None) -> None:
    """Summarize a metrics CSV into stats plus plot-ready series."""
    try:
        records = read_metrics_csv(metrics)
        data = replay_metrics(records, final_mpd_px=final_threshold)
    except ViewServoError as exc:
        raise click.ClickException(str(exc))
    text = json.dumps(data, indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(text + "\n")
        click.echo(f"wrote {out_path}")
    else:
        click.echo(text)


@main.command("export-graph")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.argument("output", type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
def export_graph(config: str, output: str, seed: int | None) -> None:
    """Build the scenario's view graph by running its capture script, then save it."""
    cfg = _load(config, seed, None)
    world = build_world(cfg)
    world, graph = build_graph(world, cfg)
    graph.save_json(output)
    click.echo(f"wrote {len(graph.vertices)} vertices and {len(graph.edges)} edges to {output}")


@main.command()
@click.option("--host", envvar="VIEWSERVO_HOST", default="127.0.0.1", show_default=True,
              help="Bind address (env VIEWSERVO_HOST).")
@click.option("--port", envvar="VIEWSERVO_PORT", default=8077, type=int, show_default=True,
              help="Bind port (env VIEWSERVO_PORT).")
@click.option("--config", "config_path", envvar="VIEWSERVO_CONFIG", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Scenario config for the session (env VIEWSERVO_CONFIG).")
@click.option("--ui-dir", envvar="VIEWSERVO_UI_DIR", default=None,
              type=click.Path(file_okay=False),
              help="Built operator console to serve at / (env VIEWSERVO_UI_DIR; "
                   "defaults to frontend/dist when present).")
@click.option("--realtime/--no-realtime", default=True, show_default=True,
              help="Pace servo frames at the configured frame interval.")
def serve(host: str, port: int, config_path: str | None, ui_dir: str | None, realtime: bool) -> None:
    """Start the session service."""
    import uvicorn

    from viewservo.service import SessionConfig, create_app

    scenario = load_scenario(config_path) if config_path else ScenarioConfig()
    static_dir = Path(ui_dir) if ui_dir else (DEFAULT_UI_DIR if DEFAULT_UI_DIR.is_dir() else None)
    app = create_app(SessionConfig(scenario=scenario, realtime=realtime), static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
