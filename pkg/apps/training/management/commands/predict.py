"""
Management command to segment one volume.
"""

from apps.training.management.base import MASMCommand
from apps.training.services import PredictionService


class Command(MASMCommand):
    """Write a label-only MMV1 mask and optional mid-slice images."""

    help = 'Predict region masks for an MMV1 volume'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', required=True, help='Trained checkpoint')
        parser.add_argument('--input', required=True, help='MMV1 volume to segment')
        parser.add_argument('--output', required=True, help='Mask file to write')
        parser.add_argument('--slices', default=None, help='Directory for mid-slice PGM images')

    def run(self, **options):
        config = self.resolve_config(options)
        mask = PredictionService(config).predict(
            options['checkpoint'], options['input'], options['output'], options['slices']
        )
        self.stdout.write(self.style.SUCCESS(
            f"Wrote {options['output']} ({int(mask[..., 1].sum())} whole-tumor voxels)"
        ))
