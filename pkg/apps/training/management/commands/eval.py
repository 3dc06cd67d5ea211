"""
Management command to evaluate a checkpoint on labeled cases.
"""

from pathlib import Path

from apps.metrics.exporters import ExcelExporter, ExportService, KeyValueExporter, TableExporter
from apps.training.management.base import MASMCommand
from apps.training.services import EvaluationService

EXPORTERS = {
    'kv': KeyValueExporter,
    'tsv': TableExporter,
    'xlsx': ExcelExporter,
}


class Command(MASMCommand):
    """Report per-case and mean Dice and HD95."""

    help = 'Evaluate a checkpoint with Dice and HD95'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--data', default=None, help='Directory holding manifest.tsv')
        parser.add_argument('--checkpoint', required=True, help='Checkpoint to evaluate')
        parser.add_argument('--workers', type=int, default=None, help='Evaluation threads')
        parser.add_argument(
            '--format',
            action='append',
            choices=sorted(EXPORTERS),
            default=None,
            help='Report formats to write (default: kv and tsv)',
        )

    def run(self, **options):
        config = self.resolve_config(options, data_dir=options['data'])
        report = EvaluationService(config, workers=options['workers']).evaluate(options['checkpoint'])

        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name in options['format'] or ['kv', 'tsv']:
            path = ExportService(EXPORTERS[name]()).write(report, out_dir)
            self.stdout.write(f'wrote {path}')

        for key, value in report.means().items():
            self.stdout.write(f'{key}={value:.6f}')
        if report.flagged:
            self.stdout.write(self.style.WARNING(f"HD95 sentinel used for: {', '.join(report.flagged)}"))
        self.stdout.write(self.style.SUCCESS(f'Evaluated {len(report.cases)} cases'))
