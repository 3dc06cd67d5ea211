"""
Management command for end-to-end finite-difference gradient checks.
"""

import argparse

from apps.core.exceptions import GradientCheckFailed
from apps.training.management.base import MASMCommand
from apps.training.services import GradientCheckService


class Command(MASMCommand):
    """Check every parameter group under every module toggle combination."""

    help = 'Compare backward gradients with central differences on the tiny config'
    common_flags = False

    def add_arguments(self, parser):
        parser.add_argument('--seed', type=int, default=0, help='Seed for weights, data and sampled entries')
        parser.add_argument('--entries', type=int, default=4, help='Entries checked per parameter tensor')
        parser.add_argument('--corrupt', default=None, help=argparse.SUPPRESS)

    def run(self, **options):
        service = GradientCheckService(seed=options['seed'], max_entries=options['entries'])
        try:
            outcomes = service.run(corrupt=options['corrupt'])
        except GradientCheckFailed as exc:
            self._print(exc.outcomes, service.tolerance)
            raise
        self._print(outcomes, service.tolerance)
        self.stdout.write(self.style.SUCCESS('All gradient checks passed'))

    def _print(self, outcomes, tolerance):
        for outcome in outcomes:
            self.stdout.write(f'[{outcome.name}]')
            for group, error in outcome.groups.items():
                status = 'ok' if error < tolerance else 'FAIL'
                self.stdout.write(f'  {group}\t{error:.3e}\t{status}')
