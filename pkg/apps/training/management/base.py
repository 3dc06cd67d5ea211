"""
Shared base for the run commands.

Demonstrates:
- Common --config/--seed/--out flags
- Translating domain errors into process exit codes
"""

import sys
from typing import Any, Dict, Optional

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from apps.core.exceptions import ExitCode, MASMError
from apps.training.config import RunConfig


def format_validation(error: ValidationError) -> str:
    if hasattr(error, 'error_dict'):
        return '; '.join(f"{key}: {' '.join(messages)}" for key, messages in error.message_dict.items())
    return ' '.join(error.messages)


class MASMCommand(BaseCommand):
    """
    Base class: subclasses implement ``run`` instead of ``handle``.

    Exit codes: 0 ok, 1 usage or configuration, 2 numeric failure, 3 IO.
    """

    common_flags = True
    default_out: Optional[str] = None

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        usage_error = parser.error

        def error(message):
            try:
                usage_error(message)
            except SystemExit:
                sys.exit(ExitCode.USAGE)

        parser.error = error
        return parser

    def add_arguments(self, parser):
        if self.common_flags:
            parser.add_argument('--config', default=None, help='Run config file of key = value lines')
            parser.add_argument('--seed', type=int, default=None, help='Seed overriding the config')
            parser.add_argument('--out', default=self.default_out, help='Output directory')
            parser.add_argument(
                '--set',
                action='append',
                default=[],
                metavar='KEY=VALUE',
                help='Override any config key',
            )

    def overrides(self, options: Dict[str, Any]) -> Dict[str, Any]:
        values: Dict[str, Any] = {}
        for item in options.get('set') or []:
            key, sep, value = item.partition('=')
            key = key.strip().lower()
            if not sep or key not in RunConfig.keys():
                raise ValidationError({'set': f"expected KEY=VALUE with a known key, got {item!r}"})
            values[key] = value.strip()
        if options.get('seed') is not None:
            values['seed'] = options['seed']
        if options.get('out'):
            values['out_dir'] = options['out']
        return values

    def resolve_config(self, options: Dict[str, Any], **extra) -> RunConfig:
        values = self.overrides(options)
        values.update({key: value for key, value in extra.items() if value is not None})
        config = RunConfig.load(options.get('config'), values)
        config.clean()
        return config

    def handle(self, *args, **options):
        try:
            self.run(**options)
        except ValidationError as exc:
            raise CommandError(f"invalid configuration: {format_validation(exc)}", returncode=ExitCode.USAGE)
        except MASMError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code)
        except OSError as exc:
            raise CommandError(f"I/O error: {exc}", returncode=ExitCode.IO)

    def run(self, **options):
        raise NotImplementedError
