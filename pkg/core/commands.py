import logging

from django.core.management.base import BaseCommand

from .exceptions import BenchmarkError, as_command_error

logger = logging.getLogger('core')

LAYOUT_ALIASES = {
    'femto': 'femto_like', 'xjtu': 'xjtu_like', 'cwru': 'cwru_like',
    'femto_like': 'femto_like', 'xjtu_like': 'xjtu_like', 'cwru_like': 'cwru_like',
}


class BenchCommand(BaseCommand):
    """
    Base for benchmark commands with sub-actions.

    Subclasses register sub-parsers in ``add_actions`` and implement
    ``action_<name>``; harness errors become ``CommandError`` with the error's
    exit code.
    """

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='action', required=True)
        self.add_actions(subparsers)

    def add_actions(self, subparsers):
        raise NotImplementedError

    def handle(self, *args, **options):
        action = options['action'].replace('-', '_')
        try:
            getattr(self, f'action_{action}')(**options)
        except BenchmarkError as exc:
            logger.error(f"❌ {options['action']} failed: {exc}")
            raise as_command_error(exc) from exc

    def success(self, message: str):
        self.stdout.write(self.style.SUCCESS(message))

    def warn(self, message: str):
        self.stdout.write(self.style.WARNING(message))
