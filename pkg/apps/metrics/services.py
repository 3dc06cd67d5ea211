"""
Evaluation metrics.

Features:
- Dice score on thresholded masks
- 95th-percentile symmetric Hausdorff distance on voxel sets
- Per-case evaluation of a probability volume against its label
"""

import logging
import math
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

from apps.core.exceptions import ShapeError
from apps.metrics.reports import CaseMetrics
from apps.volumes.models import TumorRegion

logger = logging.getLogger(__name__)

THRESHOLD = 0.5
PERCENTILE = 95

VoxelSet = Union[np.ndarray, Sequence[Sequence[int]]]


def dice_score(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    """2|A and B| / (|A| + |B|); two empty masks score 1."""
    a = np.asarray(pred_mask, dtype=bool)
    b = np.asarray(gt_mask, dtype=bool)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def _coordinates(voxels: VoxelSet, extents: Optional[Sequence[int]]) -> np.ndarray:
    array = np.asarray(voxels)
    if extents is not None and array.dtype == bool:
        return np.argwhere(array)
    return array.reshape(-1, 3).astype(np.int64)


def nearest_rank(values: np.ndarray, percentile: int = PERCENTILE) -> float:
    """The ceil(p/100 * n)-th smallest value, no interpolation."""
    ordered = np.sort(values)
    rank = (percentile * len(ordered) + 99) // 100
    return float(ordered[max(rank, 1) - 1])


def _directed(source: np.ndarray, target: np.ndarray) -> float:
    tree = cKDTree(target)
    _, nearest = tree.query(source)
    distances = np.sqrt(((source - target[nearest]) ** 2).sum(axis=1))
    return nearest_rank(distances)


def diagonal(extents: Sequence[int]) -> float:
    return math.sqrt(sum(e * e for e in extents))


def hd95(a: VoxelSet, b: VoxelSet, extents: Optional[Sequence[int]] = None) -> float:
    """
    max of the nearest-rank 95th percentiles of the directed nearest-neighbour
    distances A->B and B->A.

    ``a`` and ``b`` are boolean masks or (n, 3) integer coordinates. Two empty
    sets give 0; exactly one empty set gives the volume diagonal, which needs
    ``extents`` (taken from the mask shape when masks are passed).
    """
    mask_extents = np.shape(a) if np.asarray(a).dtype == bool else None
    extents = extents or mask_extents
    source = _coordinates(a, mask_extents)
    target = _coordinates(b, mask_extents)
    if len(source) == 0 and len(target) == 0:
        return 0.0
    if len(source) == 0 or len(target) == 0:
        if extents is None:
            raise ShapeError('hd95', [np.shape(a), np.shape(b)], 'one voxel set is empty and no extents were given')
        return diagonal(extents)
    return max(_directed(source, target), _directed(target, source))


def evaluate_case(
    probabilities: np.ndarray,
    label: np.ndarray,
    case_id: str = '',
    threshold: float = THRESHOLD,
) -> CaseMetrics:
    """Threshold (V, V, V, 3) probabilities and score each region."""
    prediction = np.asarray(probabilities) > threshold
    label = np.asarray(label).astype(bool)
    dice, distances, sentinel = [], [], []
    for region in range(TumorRegion.COUNT):
        pred, gt = prediction[..., region], label[..., region]
        dice.append(dice_score(pred, gt))
        distances.append(hd95(pred, gt))
        sentinel.append(bool(pred.any()) != bool(gt.any()))
    metrics = CaseMetrics(case_id, tuple(dice), tuple(distances), tuple(sentinel))
    if any(sentinel):
        logger.warning("case %s: HD95 sentinel used for %s", case_id,
                       [name for name, flag in zip(TumorRegion.NAMES, sentinel) if flag])
    return metrics
