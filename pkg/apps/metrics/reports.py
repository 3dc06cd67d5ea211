"""
Evaluation report data transfer objects.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from apps.volumes.models import TumorRegion


@dataclass
class CaseMetrics:
    """Dice and HD95 of one case, in (ET, WT, TC) order."""

    case_id: str
    dice: Tuple[float, ...]
    hd95: Tuple[float, ...]
    hd95_sentinel: Tuple[bool, ...] = (False, False, False)

    def as_row(self) -> Dict[str, object]:
        row: Dict[str, object] = {'case_id': self.case_id}
        for index, name in enumerate(TumorRegion.NAMES):
            row[f'dice_{name}'] = self.dice[index]
        for index, name in enumerate(TumorRegion.NAMES):
            row[f'hd95_{name}'] = self.hd95[index]
        for index, name in enumerate(TumorRegion.NAMES):
            row[f'sentinel_{name}'] = int(self.hd95_sentinel[index])
        return row


@dataclass
class EvalReport:
    """
    Per-case metrics ordered by case id, plus their arithmetic means.
    """

    cases: List[CaseMetrics] = field(default_factory=list)

    def add(self, metrics: CaseMetrics) -> None:
        self.cases.append(metrics)
        self.cases.sort(key=lambda case: case.case_id)

    @property
    def case_ids(self) -> List[str]:
        return [case.case_id for case in self.cases]

    @property
    def flagged(self) -> List[str]:
        """Cases where an HD95 value is the empty-set sentinel."""
        return [case.case_id for case in self.cases if any(case.hd95_sentinel)]

    def means(self) -> Dict[str, float]:
        if not self.cases:
            return {}
        dice = np.mean([case.dice for case in self.cases], axis=0)
        hd95 = np.mean([case.hd95 for case in self.cases], axis=0)
        result = {}
        for index, name in enumerate(TumorRegion.NAMES):
            result[f'dice_{name}'] = float(dice[index])
        for index, name in enumerate(TumorRegion.NAMES):
            result[f'hd95_{name}'] = float(hd95[index])
        return result

    def rows(self) -> List[Dict[str, object]]:
        return [case.as_row() for case in self.cases]
