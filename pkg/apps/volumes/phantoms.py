"""
Synthetic multi-modal tumor phantoms.

Each tumor is three concentric ellipsoids sharing one set of axis ratios
(whole tumor, core, enhancing), so the label nesting ET within TC within WT
holds by construction.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np

from apps.core.rng import Rng
from apps.volumes.models import Modality, MultiModalVolume, PhantomSpec, TumorRegion

logger = logging.getLogger(__name__)

AXIS_RATIO_RANGE = (0.8, 1.2)

# Region code per voxel
BACKGROUND, EDEMA, CORE, ENHANCING = 0, 1, 2, 3


def _draw_tumor(spec: PhantomSpec, rng: Rng) -> Tuple[np.ndarray, np.ndarray, Tuple[float, float, float]]:
    ratios = rng.uniform(*AXIS_RATIO_RANGE, shape=3)
    radii = (
        float(rng.uniform(*spec.wt_radius)),
        float(rng.uniform(*spec.tc_radius)),
        float(rng.uniform(*spec.et_radius)),
    )
    margin = radii[0] * ratios.max()
    low, high = margin, spec.size - 1 - margin
    draws = rng.uniform(0.0, 1.0, shape=3)
    if high > low:
        center = low + (high - low) * draws
    else:
        center = np.full(3, (spec.size - 1) / 2.0)
    return center, ratios, radii


def region_codes(spec: PhantomSpec, rng: Rng) -> np.ndarray:
    """
    (size, size, size) map of region codes: the highest code any tumor
    assigns to the voxel.
    """
    codes = np.zeros((spec.size,) * 3, dtype=np.uint8)
    if not np.any(np.asarray(spec.contrast)):
        return codes

    low, high = spec.tumor_count
    count = int(rng.integers(low, high + 1))
    grid = np.indices(codes.shape, dtype=np.float64)
    for _ in range(count):
        center, ratios, (r_wt, r_tc, r_et) = _draw_tumor(spec, rng)
        offsets = (grid - center[:, None, None, None]) / ratios[:, None, None, None]
        distance = np.sqrt((offsets ** 2).sum(axis=0))
        tumor = np.where(distance <= r_et, ENHANCING,
                         np.where(distance <= r_tc, CORE,
                                  np.where(distance <= r_wt, EDEMA, BACKGROUND)))
        np.maximum(codes, tumor.astype(np.uint8), out=codes)
    return codes


def labels_from_codes(codes: np.ndarray) -> np.ndarray:
    label = np.zeros(codes.shape + (TumorRegion.COUNT,), dtype=np.uint8)
    label[..., TumorRegion.ET] = codes == ENHANCING
    label[..., TumorRegion.WT] = codes >= EDEMA
    label[..., TumorRegion.TC] = codes >= CORE
    return label


def gen_phantom(spec: PhantomSpec, case_id: str = '', rng: Optional[Rng] = None) -> MultiModalVolume:
    """
    Deterministic phantom for ``spec.seed``.

    Intensity of modality i at a voxel with region code c is
    background[i] + contrast[i, c - 1] (c > 0) plus Gaussian noise.

    Raises:
        PhantomSpecError: when the spec is invalid
    """
    spec.clean()
    rng = rng or Rng(spec.seed)
    codes = region_codes(spec, rng)
    contrast = np.asarray(spec.contrast, dtype=np.float64)

    voxels = np.empty((Modality.COUNT,) + codes.shape)
    lookup = np.concatenate([np.zeros((Modality.COUNT, 1)), contrast], axis=1)
    for i in range(Modality.COUNT):
        voxels[i] = spec.background[i] + lookup[i][codes]
    if spec.noise_sigma > 0:
        voxels += rng.normal(voxels.shape, scale=spec.noise_sigma)

    volume = MultiModalVolume(voxels=voxels, label=labels_from_codes(codes), case_id=case_id)
    logger.debug("phantom %s: %d tumor voxels", case_id or spec.seed, int(volume.label[..., TumorRegion.WT].sum()))
    return volume


def gen_phantoms(specs: List[PhantomSpec], case_ids: List[str]) -> List[MultiModalVolume]:
    return [gen_phantom(spec, case_id) for spec, case_id in zip(specs, case_ids)]
