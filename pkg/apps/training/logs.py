"""
Training log records and their text serialization.

The log file holds ``key=value`` lines for the resolved config, a
tab-separated step table and ``key=value`` lines for the final report. Wall
time is written to a separate timing file so the log itself is a pure
function of seed, config and data.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

from apps.metrics.reports import EvalReport
from apps.volumes.formats import atomic_write
from apps.volumes.models import TumorRegion

LOG_NAME = 'train_log.txt'
TIMING_NAME = 'timing.tsv'
TABLE_HEADER = ('step', 'loss') + tuple(f'dice_{name}' for name in TumorRegion.NAMES) + ('lr',)


def fmt(value: float) -> str:
    return f'{value:.10g}'


@dataclass
class StepRecord:
    step: int
    loss: float
    dice: Tuple[float, ...]
    learning_rate: float
    wall_time: float = 0.0

    def row(self) -> str:
        values = [str(self.step), fmt(self.loss)] + [fmt(d) for d in self.dice] + [fmt(self.learning_rate)]
        return '\t'.join(values)


@dataclass
class TrainLog:
    config_lines: List[str] = field(default_factory=list)
    records: List[StepRecord] = field(default_factory=list)
    report: Optional[EvalReport] = None

    def append(self, record: StepRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise ValueError(f"step {record.step} after step {self.records[-1].step}")
        self.records.append(record)

    @property
    def final_loss(self) -> Optional[float]:
        return self.records[-1].loss if self.records else None

    def text(self) -> str:
        lines = list(self.config_lines)
        lines.append('\t'.join(TABLE_HEADER))
        lines.extend(record.row() for record in self.records)
        if self.report is not None:
            lines.extend(f'final.{key}={fmt(value)}' for key, value in self.report.means().items())
        return '\n'.join(lines) + '\n'

    def timing_text(self) -> str:
        lines = ['step\twall_seconds']
        lines.extend(f'{record.step}\t{record.wall_time:.3f}' for record in self.records)
        return '\n'.join(lines) + '\n'

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / LOG_NAME
        atomic_write(path, self.text().encode('utf-8'))
        atomic_write(Path(out_dir) / TIMING_NAME, self.timing_text().encode('utf-8'))
        return path
