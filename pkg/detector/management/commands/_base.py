"""
Shared plumbing for the detector management commands
"""

import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from detector.config import load_config
from detector.exceptions import ConfigurationError, DetectorError

logger = logging.getLogger('detector.commands')


class DetectorCommand(BaseCommand):
    """
    Base for commands that run detector operations.

    Subclasses implement run(); any DetectorError becomes a CommandError
    carrying the one-line error record and the error's exit code.
    """

    def handle(self, *args, **options):
        try:
            self.run(*args, **options)
        except DetectorError as exc:
            logger.error('%s failed: %s', self.__module__.rsplit('.', 1)[-1], exc)
            raise CommandError(exc.as_line(), returncode=exc.exit_code) from exc

    def run(self, *args, **options):
        raise NotImplementedError

    def success(self, message):
        self.stdout.write(self.style.SUCCESS(message))


class ConfigCommand(DetectorCommand):
    """Commands whose first argument is an experiment config file"""

    def add_arguments(self, parser):
        parser.add_argument('config', help='Experiment config file ("key = value" lines)')

    def handle(self, *args, **options):
        try:
            self.config = load_config(options['config'])
        except DetectorError as exc:
            raise CommandError(exc.as_line(), returncode=exc.exit_code) from exc
        super().handle(*args, **options)

    def output_dir(self):
        return Path(self.config.output_dir or settings.DETECTOR_OUTPUT_DIR)

    def checkpoint_path(self, override=None):
        return Path(override or self.config.checkpoint_path or self.output_dir() / 'model.ckpt')

    def calibration_path(self, override=None):
        return Path(override or self.output_dir() / 'calibration.txt')


def require(value, message):
    if not value:
        raise ConfigurationError(message)
    return value
