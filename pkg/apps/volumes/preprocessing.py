"""
Intensity normalization and training-time augmentation.
"""

from typing import Sequence

import numpy as np

from apps.core.exceptions import NormalizationError
from apps.core.rng import Rng
from apps.volumes.models import Modality, MultiModalVolume

MIRROR_PROBABILITY = 0.5
SCALE_RANGE = (0.9, 1.1)
SHIFT_RANGE = (-0.1, 0.1)


def normalize(volume: MultiModalVolume) -> MultiModalVolume:
    """
    Standardize each modality over its nonzero voxels; zeros stay zero.

    Raises:
        NormalizationError: naming a modality with fewer than two distinct
            nonzero values
    """
    voxels = volume.voxels.copy()
    for i in range(volume.num_modalities):
        name = Modality.label(i) if i < Modality.COUNT else str(i)
        nonzero = voxels[i] != 0
        if not nonzero.any():
            raise NormalizationError(name, 'all voxels are zero')
        values = voxels[i][nonzero]
        if np.unique(values).size < 2:
            raise NormalizationError(name, 'fewer than two distinct nonzero values')
        voxels[i][nonzero] = (values - values.mean()) / values.std()
    return volume.replace(voxels=voxels)


def mirror(volume: MultiModalVolume, axis: int) -> MultiModalVolume:
    """Flip all modalities and the label along spatial ``axis`` (0, 1 or 2)."""
    voxels = np.flip(volume.voxels, axis=axis + 1).copy()
    label = None if volume.label is None else np.flip(volume.label, axis=axis).copy()
    return MultiModalVolume(voxels=voxels, label=label, case_id=volume.case_id)


def adjust_intensity(volume: MultiModalVolume, scales: Sequence[float], shifts: Sequence[float]) -> MultiModalVolume:
    """x * scale + shift per modality on nonzero voxels; labels untouched."""
    voxels = volume.voxels.copy()
    for i in range(volume.num_modalities):
        nonzero = voxels[i] != 0
        voxels[i][nonzero] = voxels[i][nonzero] * scales[i] + shifts[i]
    return volume.replace(voxels=voxels)


def augment(volume: MultiModalVolume, rng: Rng) -> MultiModalVolume:
    """
    Random mirroring, then per-modality scale and shift.

    Draw order: three mirror flags (axes 0, 1, 2), then per modality a scale
    followed by a shift.
    """
    flips = [rng.bernoulli(MIRROR_PROBABILITY) for _ in range(3)]
    scales, shifts = [], []
    for _ in range(volume.num_modalities):
        scales.append(float(rng.uniform(*SCALE_RANGE)))
        shifts.append(float(rng.uniform(*SHIFT_RANGE)))

    for axis, flip in enumerate(flips):
        if flip:
            volume = mirror(volume, axis)
    return adjust_intensity(volume, scales, shifts)
