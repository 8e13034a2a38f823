# app.py
import logging
import sys

import click

from Config import __version__, config, current_config_name
from models.errors import ConfigError, PartKitError
from models.run_config import RunConfig
from routes import execute, report_error

logger = logging.getLogger('partkit')


# ============================================================================
# APPLICATION OBJECT
# ============================================================================

class PartKitApp:
    """Active configuration plus the command handlers registered by routes/"""

    def __init__(self, config_name, config_class):
        self.name = config_name
        self.config = config_class
        self.handlers = {}

    def register(self, handlers):
        for command, handler in handlers.items():
            if command in self.handlers:
                raise ConfigError(f'command {command!r} registered twice')
            self.handlers[command] = handler

    def run_config(self, config_path=None, **overrides):
        """Config defaults <- config file <- command-line flags"""
        if config_path:
            base = RunConfig.load(config_path, self.config)
        else:
            base = RunConfig.defaults(self.config)
        return base.with_overrides(**overrides)

    def dispatch(self, run_config):
        if run_config.command is None:
            raise ConfigError('no command given')
        handler = self.handlers.get(run_config.command)
        if handler is None:
            raise ConfigError(f'unknown command {run_config.command!r}')
        if not run_config.output:
            raise ConfigError(f'{run_config.command}: an output path is required')
        logger.info(f"Running {run_config.command}")
        return handler(self, run_config)


def _configure_logging(app_config):
    stream = sys.stdout if app_config.LOG_TO_STDOUT else sys.stderr
    handler = logging.StreamHandler(stream)
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(name)s: %(message)s'))
    root = logging.getLogger()
    for existing in list(root.handlers):
        if getattr(existing, 'partkit', False):
            root.removeHandler(existing)
    handler.partkit = True
    root.addHandler(handler)
    root.setLevel(app_config.LOG_LEVEL)


def create_app(config_name=None):
    """Factory: configuration, logging, task dispatch and command handlers"""
    if config_name is None:
        config_name = current_config_name()
    if config_name not in config:
        raise ConfigError(f'unknown environment {config_name!r}')

    app_config = config[config_name]
    app = PartKitApp(config_name, app_config)
    _configure_logging(app_config)

    from utils.tasks import configure_celery
    configure_celery(app_config)

    from routes import adversarial, evaluate, ingest, plan, pose, segment
    for module in (ingest, segment, pose, evaluate, plan, adversarial):
        app.register(module.HANDLERS)

    logger.debug(f"PartKit {__version__} ({config_name}), "
                 f"celery {'on' if app_config.CELERY_ENABLED else 'off'}")
    return app


def run_pipeline(run_config, app=None):
    """Execute the command named by a RunConfig; returns the handler's summary"""
    app = app or create_app()
    return app.dispatch(run_config)


# ============================================================================
# COMMAND LINE
# ============================================================================

@click.group()
@click.version_option(__version__, prog_name='partkit')
@click.option('--env', 'env_name', default=None,
              help='Configuration environment (development, production, testing).')
@click.pass_context
def cli(ctx, env_name):
    """PartKit: part segmentation, pose fitting, evaluation and manipulation planning."""
    try:
        ctx.obj = create_app(env_name)
    except PartKitError as e:
        ctx.exit(report_error(e))


@cli.command('run')
@click.version_option(__version__, prog_name='partkit')
@click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False),
              help='JSON run configuration naming the command.')
@click.option('--output', default=None, help='Override the output path of the config file.')
@click.pass_obj
def run_command(app, config_path, output):
    """Run the command named in a config file."""
    execute(app, None, config_path, output=output)


def _register_commands():
    from routes import adversarial, evaluate, ingest, plan, pose, segment
    for module in (ingest, segment, pose, evaluate, plan, adversarial):
        for command in module.COMMANDS:
            cli.add_command(command)


_register_commands()


if __name__ == '__main__':
    cli()
