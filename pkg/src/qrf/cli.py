"""Command-line entry point.

Subcommands: serve (gateway + dispatcher), simulate (virtual-clock run with
JSON/CSV output and rendered figures), validate-config, export (journal ->
CSV), replay (named trigger trace -> assignment transcript). Exit codes:
0 success, 1 domain failure, 2 usage error.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import signal
import sys
from pathlib import Path
from random import Random

import click

from . import configio, replay as replay_mod, sim
from .dispatch import Dispatcher
from .gateway import Gateway, create_app
from .masterlog import MasterLogStore
from .model import ConfigError, validate_config

logger = logging.getLogger(__name__)


def _load_deployment(path: str) -> configio.DeploymentConfig:
    deployment = configio.load_deployment(path)
    password = os.environ.get("QRF_PASSWORD")
    if password:
        deployment.dispatcher = dataclasses.replace(
            deployment.dispatcher, shared_password=password)
    return deployment


def _validate_or_die(deployment: configio.DeploymentConfig) -> None:
    report = validate_config(deployment.definitions, deployment.dispatcher)
    for warning in report.warnings:
        click.echo(f"warning: {warning}", err=True)
    if not report.ok:
        for error in report.errors:
            click.echo(f"error: {error}", err=True)
        raise SystemExit(2)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--bind", default="127.0.0.1:8000", show_default=True,
              help="host:port to listen on.")
@click.option("--journal", "journal_path", default=None,
              type=click.Path(dir_okay=False),
              help="Masterlog journal file (omit for in-memory).")
def serve(config_path: str, bind: str, journal_path: str | None) -> None:
    """Run the gateway, dispatcher, and masterlog as one service."""
    try:
        deployment = _load_deployment(config_path)
    except (ConfigError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        raise SystemExit(2)
    _validate_or_die(deployment)

    store = MasterLogStore(journal_path, fsync=bool(journal_path))
    dispatcher = Dispatcher(deployment.definitions, deployment.dispatcher, store)
    gateway = Gateway(dispatcher, store,
                      blob_dir=Path(journal_path).parent / "recordings"
                      if journal_path else None)
    app = create_app(gateway)

    def shutdown(signum, frame):
        store.close()
        raise SystemExit(0)

    signal.signal(signal.SIGTERM, shutdown)

    host, _, port = bind.rpartition(":")
    import uvicorn
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
    finally:
        store.close()


@main.command()
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", default=None, type=int,
              help="Override the scenario's seed.")
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False),
              help="Output directory for report.json, masterlog.csv, figures.")
def simulate(scenario_path: str, seed: int | None, out_dir: str) -> None:
    """Run a virtual-clock simulation and write its report and figures."""
    try:
        scenario = sim.load_scenario(scenario_path)
    except (ConfigError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        raise SystemExit(2)
    if seed is not None:
        scenario.seed = seed
    try:
        report = sim.run(scenario)
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        raise SystemExit(1)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")

    import csv
    from .masterlog import CSV_COLUMNS
    with open(out / "masterlog.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\r\n")
        writer.writeheader()
        for row in report.masterlog_rows:
            writer.writerow(row)

    from .report import render_figures
    for path in render_figures(report, out):
        click.echo(f"wrote {path}")
    click.echo(f"wrote {out / 'report.json'}")
    click.echo(f"wrote {out / 'masterlog.csv'}")
    click.echo("")
    click.echo(report.summary_table())


@main.command("validate-config")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
def validate_config_cmd(config_path: str) -> None:
    """Check a deployment config; exit 0 only if it is usable."""
    try:
        deployment = _load_deployment(config_path)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        raise SystemExit(2)
    report = validate_config(deployment.definitions, deployment.dispatcher)
    for warning in report.warnings:
        click.echo(f"warning: {warning}")
    for error in report.errors:
        click.echo(f"error: {error}")
    if not report.ok:
        raise SystemExit(1)
    click.echo(f"ok: {len(deployment.definitions)} definitions, "
               f"{len(deployment.dispatcher.roster)} students")


@main.command()
@click.option("--journal", "journal_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True,
              type=click.Path(dir_okay=False))
def export(journal_path: str, out_path: str) -> None:
    """Export a masterlog journal to CSV."""
    store = MasterLogStore(journal_path)
    try:
        Path(out_path).write_text(store.export_csv(), encoding="utf-8",
                                  newline="")
        click.echo(f"wrote {out_path} ({len(store)} entries)")
    finally:
        store.close()


@main.command("replay")
@click.option("--fixture", "fixture_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--ranks", "ranks_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON object mapping trigger name to rank.")
@click.option("--ttl-ms", default=180_000, show_default=True)
@click.option("--cooldown-ms", default=240_000, show_default=True)
def replay_cmd(fixture_path: str, ranks_path: str,
               ttl_ms: int, cooldown_ms: int) -> None:
    """Replay a named trigger trace and print the assignment transcript."""
    try:
        rows = replay_mod.load_trace(fixture_path)
        ranks = json.loads(Path(ranks_path).read_text(encoding="utf-8"))
        transcript = replay_mod.replay_fixture(rows, ranks, ttl_ms=ttl_ms,
                                               cooldown_ms=cooldown_ms)
    except (ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        raise SystemExit(1)
    click.echo(json.dumps({"requests": transcript.requests}, indent=2))


if __name__ == "__main__":
    main()
