import functools
import logging
import sys
from typing import Optional

import click

from ha_sim.errors import HaSimError, ValidationError
from ha_sim.harness import ExperimentHarness
from ha_sim.latency import list_presets, load_profile
from ha_sim.metrics import max_tolerable_failures
from ha_sim.report import FORMATS, emit_report, read_rows, render_table
from ha_sim.scenario import list_scenarios, load_scenarios
from ha_sim.utils import setup_logging

_logger = logging.getLogger(__name__)


def exit_codes(command):
    """Validation problems exit with 1, any other simulator error with 2."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except ValidationError as error:
            _logger.error(str(error))
            sys.exit(1)
        except HaSimError as error:
            _logger.error(str(error))
            sys.exit(2)

    return wrapper


@click.group()
@click.option('-v', '--verbose', is_flag=True, help='Log every dispatched action (DEBUG level).')
@click.option('--log-file', type=click.Path(dir_okay=False), default=None, help='Also append the log to this file.')
def cli(verbose: bool, log_file: Optional[str]):
    setup_logging(logging.DEBUG if verbose else logging.INFO, log_file)


@cli.command(name="run")
@click.option('-s', '--scenario', required=True, help='Scenario file, or the name of a shipped scenario (see "scenarios list").')
@click.option('-t', '--trials', type=int, default=None, help='Override the number of trials of every scenario.')
@click.option('--seed', type=int, default=None, help='Override the base seed; trial i runs with seed + i.')
@click.option('-o', '--out', default="results", show_default=True, help='Folder for results.csv and report.txt.')
@click.option('-p', '--profile', default="table1", show_default=True, help='Calibration preset name or profile file.')
@click.option('-j', '--jobs', type=int, default=1, show_default=True, help='Trials run in this many processes.')
@click.option('--overwrite', is_flag=True, help='Replace existing results in the output folder (the old ones are backed up).')
@exit_codes
def run(scenario: str, trials: Optional[int], seed: Optional[int], out: str, profile: str, jobs: int, overwrite: bool):
    if trials is not None and trials < 1:
        raise ValidationError(f"--trials must be positive, got {trials}")
    scenarios = load_scenarios(scenario)
    harness = ExperimentHarness(out_dir=out, profile=profile, trials=trials, seed=seed, jobs=jobs, overwrite=overwrite)
    reports = harness.run(scenarios)
    if reports:
        click.echo(render_table([row for report in reports for row in report.rows]))


@cli.command(name="report")
@click.option('-i', '--in', 'in_dir', required=True, type=click.Path(file_okay=False), help='Folder holding results.csv.')
@click.option('-f', '--format', 'format_', type=click.Choice(sorted(FORMATS)), default="table", show_default=True)
@click.option('-o', '--out', default=None, help='Output folder, defaults to the input folder.')
@exit_codes
def report(in_dir: str, format_: str, out: Optional[str]):
    rows = read_rows(in_dir)
    path = emit_report(rows, out or in_dir, format_)
    if format_ == "table":
        click.echo(path.read_text(encoding="utf-8"))
    click.echo(f"Wrote {path}")


@cli.group(name="presets")
def presets():
    pass


@presets.command(name="list")
@exit_codes
def presets_list():
    for name in list_presets():
        click.echo(f"{name}\t{load_profile(name).description}")


@cli.group(name="scenarios")
def scenarios():
    pass


@scenarios.command(name="list")
@exit_codes
def scenarios_list():
    for name in list_scenarios():
        documents = load_scenarios(name)
        click.echo(f"{name}\t{len(documents)} scenario(s)\t{documents[0].description}")


@cli.command(name="budget")
@click.option('--outage', type=float, required=True, help='Outage per failure in seconds.')
@click.option('--target', type=float, default=0.99999, show_default=True, help='Availability target.')
@exit_codes
def budget(outage: float, target: float):
    click.echo(max_tolerable_failures(outage, target))


if __name__ == '__main__':
    if len(sys.argv) == 1:
        with click.Context(cli) as ctx:
            click.echo(cli.get_help(ctx))
    else:
        cli()
