"""
Command-line interface: run, check and export.

Exit codes: 0 ok, 1 solver failure, 2 configuration error.
"""
import logging
import os

import click

from adaptopt import __version__, create_app
from adaptopt.errors import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_SOLVER_FAILURE, AdaptOptError, ConfigError

logger = logging.getLogger(__name__)

EXPORT_FIELDS = ('density', 'vm', 'cnf')


def _report_config_error(e):
    click.echo(f'Configuration error: {e.message}', err=True)
    for message in e.errors:
        click.echo(f'  {message}', err=True)


@click.group()
@click.version_option(__version__, prog_name='adaptopt')
@click.option('--env', 'config_name', default=None,
              help='Settings profile (development, testing, production); defaults to ADAPTOPT_ENV.')
@click.option('--log-dir', default=None, type=click.Path(file_okay=False),
              help='Directory for log files; run defaults to <output>/logs.')
@click.pass_context
def cli(ctx, config_name, log_dir):
    """Adaptive-mesh topology optimization driven by configurational forces"""
    ctx.ensure_object(dict)
    ctx.obj['config_name'] = config_name
    ctx.obj['log_dir'] = log_dir


@cli.command()
@click.argument('config_path', type=click.Path(dir_okay=False))
@click.option('--output-root', default=None, type=click.Path(file_okay=False),
              help='Root for run directories; defaults to ADAPTOPT_OUTPUT_ROOT.')
@click.pass_context
def run(ctx, config_path, output_root):
    """Run an optimization described by CONFIG_PATH"""
    from adaptopt.commands.runner import run_optimization
    from adaptopt.models.run_config import load_config

    # Config errors exit before any output directory is created
    try:
        config = load_config(config_path)
    except ConfigError as e:
        _report_config_error(e)
        ctx.exit(EXIT_CONFIG_ERROR)

    from adaptopt.config import config as settings
    name = ctx.obj['config_name'] or os.environ.get('ADAPTOPT_ENV', 'development')
    root = output_root or settings.get(name, settings['default']).OUTPUT_ROOT
    output_dir = config.output_dir(root)
    log_dir = ctx.obj['log_dir'] or os.path.join(output_dir, 'logs')
    app = create_app(ctx.obj['config_name'], log_dir=log_dir)

    try:
        result = run_optimization(app, config, output_dir)
    except ConfigError as e:
        _report_config_error(e)
        ctx.exit(EXIT_CONFIG_ERROR)
    except AdaptOptError as e:
        logger.error(f"Run aborted: {e.to_dict()}")
        click.echo(f'Run aborted: {e.message}', err=True)
        ctx.exit(EXIT_SOLVER_FAILURE)

    summary = result.summary
    click.echo(f"{summary['iterations']} iterations, {summary['adaptation_events']} adaptation events, "
               f"{summary['final_cells']} cells -> {output_dir}")
    ctx.exit(result.status)


@cli.command()
@click.argument('config_path', type=click.Path(dir_okay=False))
@click.pass_context
def check(ctx, config_path):
    """Validate CONFIG_PATH and print the resolved configuration"""
    from adaptopt.models.run_config import load_config

    try:
        config = load_config(config_path)
    except ConfigError as e:
        _report_config_error(e)
        ctx.exit(EXIT_CONFIG_ERROR)

    click.echo(config.dumps(), nl=False)
    ctx.exit(EXIT_OK)


@cli.command()
@click.argument('snapshot', type=click.Path(exists=True, dir_okay=False))
@click.option('--field', type=click.Choice(EXPORT_FIELDS), required=True, help='Field to export.')
@click.option('--output', 'output_path', default=None, type=click.Path(dir_okay=False),
              help='Target .vtu path; defaults to <snapshot>_<field>.vtu.')
@click.pass_context
def export(ctx, snapshot, field, output_path):
    """Write a single field of SNAPSHOT (.npz) as a VTK unstructured grid"""
    from adaptopt.commands.runner import load_snapshot
    from adaptopt.utils.vtk_writer import write_vtu

    create_app(ctx.obj['config_name'], log_dir=ctx.obj['log_dir'])
    try:
        _, layout, payload = load_snapshot(snapshot)
    except (AdaptOptError, KeyError, ValueError, OSError) as e:
        click.echo(f'Cannot read snapshot {snapshot}: {e}', err=True)
        ctx.exit(EXIT_CONFIG_ERROR)

    if output_path is None:
        output_path = f'{os.path.splitext(snapshot)[0]}_{field}.vtu'

    if field == 'cnf':
        written = write_vtu(output_path, layout, point_vectors={'cnf': payload['cnf']})
    elif field == 'vm':
        written = write_vtu(output_path, layout, cell_data={'vm': payload['vm']})
    else:
        written = write_vtu(output_path, layout, cell_data={'density': payload['rho_hat']})

    click.echo(written)
    ctx.exit(EXIT_OK)
