import logging

import click

from config import get_config, use_config
from logging_config import setup_logging
from tools.paths import path_commands
from tools.simulation import simulation_commands
from tools.verification import verification_commands

logger = logging.getLogger(__name__)


def create_cli(config_override=None):
    """
    Build the popkit command group

    Args:
        config_override: Configuration class or dict of settings layered on
            the environment's configuration for every command run
    """
    @click.group(context_settings={'help_option_names': ['-h', '--help']})
    @click.option('--log-level', default=None, help='Override POPKIT_LOG_LEVEL')
    def cli(log_level):
        """Population protocol workbench."""
        if isinstance(config_override, dict):
            settings = use_config(overrides=config_override)
        else:
            settings = use_config(config_override)
        setup_logging(log_level or settings.LOG_LEVEL, settings.LOG_DIR)
        for problem in settings.validate_config():
            logger.warning(problem)
        logger.debug(f"Using {settings.__name__}")

    # Register command families
    for command in simulation_commands + verification_commands + path_commands:
        cli.add_command(command)

    return cli


if __name__ == "__main__":
    create_cli(get_config())()
