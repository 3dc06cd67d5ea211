"""
Management command to train a network on phantom cases.
"""

from apps.training.management.base import MASMCommand
from apps.training.services import TrainingService


class Command(MASMCommand):
    """Train, checkpoint and write the run log."""

    help = 'Train the segmentation network'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--data', default=None, help='Directory holding manifest.tsv')
        parser.add_argument('--steps', type=int, default=None, help='Total optimizer steps')
        parser.add_argument(
            '--checkpoint',
            default=None,
            help='Checkpoint whose parameters start the run; Adam moments and the learning-rate schedule start over',
        )

    def run(self, **options):
        config = self.resolve_config(
            options,
            data_dir=options['data'],
            total_steps=options['steps'],
            checkpoint=options['checkpoint'],
        )
        self.stdout.write(f'Training for {config.total_steps} steps into {config.out_dir}')
        log = TrainingService(config).run()

        self.stdout.write(self.style.SUCCESS(f'final loss={log.final_loss:.6f}'))
        for key, value in log.report.means().items():
            self.stdout.write(f'{key}={value:.6f}')
