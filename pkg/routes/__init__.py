# routes/__init__.py
"""Command modules. Each exposes COMMANDS (click commands) and HANDLERS (command -> handler)."""

import json

import click

from Config import __version__
from models.errors import PartKitError


def common_options(func):
    """--config, --output and --version, shared by every subcommand"""
    func = click.option('--output', '-o', default=None,
                        help='Output file (written atomically).')(func)
    func = click.option('--config', 'config_path', default=None,
                        type=click.Path(dir_okay=False),
                        help='JSON run configuration; flags override its values.')(func)
    return click.version_option(__version__, prog_name='partkit')(func)


def report_error(error):
    """Print a PartKitError as JSON on stderr and return its exit code"""
    click.echo(json.dumps(error.to_dict(), sort_keys=True), err=True)
    return error.exit_code


def execute(app, command, config_path, inputs=None, **overrides):
    """Build the RunConfig, dispatch it and turn failures into exit codes"""
    ctx = click.get_current_context()
    try:
        run_config = app.run_config(config_path, command=command,
                                    inputs={k: v for k, v in (inputs or {}).items() if v},
                                    **overrides)
        summary = app.dispatch(run_config)
    except PartKitError as e:
        ctx.exit(report_error(e))
    click.secho(f"✅ {run_config.command}: wrote {run_config.output}", fg='green', err=True)
    return summary
