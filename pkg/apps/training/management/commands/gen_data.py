"""
Management command to generate synthetic phantom cases.
"""

from django.core.exceptions import ValidationError

from apps.training.management.base import MASMCommand
from apps.volumes.models import PhantomSpec
from apps.volumes.services import MANIFEST_NAME, case_seed, generate_cases


class Command(MASMCommand):
    """Write seeded MMV1 phantoms and a case manifest."""

    help = 'Generate seeded synthetic multi-modal phantom cases'
    default_out = 'data'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--count', type=int, default=2, help='Number of cases')
        parser.add_argument('--size', type=int, default=None, help='Voxels per axis (default: config volume_size)')

    def run(self, **options):
        config = self.resolve_config(options)
        count = options['count']
        size = options['size'] or config.volume_size
        if count < 1:
            raise ValidationError({'count': f"count must be at least 1, got {count}"})
        for index in range(count):
            PhantomSpec.for_size(case_seed(config.seed, index), size).clean()

        entries = generate_cases(config.out_dir, count, size, config.seed)
        self.stdout.write(self.style.SUCCESS(
            f'Wrote {len(entries)} cases and {MANIFEST_NAME} to {config.out_dir}'
        ))
