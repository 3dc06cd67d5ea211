"""
Management command to describe a resolved run config.
"""

from apps.training.management.base import MASMCommand
from apps.training.services import describe


class Command(MASMCommand):
    """Print config, the toggle cost matrix and the shift parameter check."""

    help = 'Show resolved config, parameter counts and multiply-add estimates'

    def run(self, **options):
        config = self.resolve_config(options)
        for line in config.lines():
            self.stdout.write(line)
        self.stdout.write(f"placement={','.join(config.fusion_kinds())}")

        costs, parameter_free = describe(config)
        self.stdout.write('toggle\tparameters\tmacs')
        for cost in costs:
            params = 'n/a' if cost.parameters is None else str(cost.parameters)
            flops = 'n/a' if cost.flops is None else str(cost.flops)
            self.stdout.write(f'{cost.name}\t{params}\t{flops}')
        style = self.style.SUCCESS if parameter_free else self.style.ERROR
        self.stdout.write(style(f'shift_parameter_free={str(parameter_free).lower()}'))
