"""
Modality-Shift fusion at the bottleneck.

Pipeline: shift tokens across modalities, spatial attention within each
modality, shift back, attention across the four modalities at each position,
concatenate the streams.
"""

import logging
from typing import Optional

from apps.core import functional as F
from apps.core.exceptions import ShapeError
from apps.core.tensor import Tensor
from apps.modality_shift.models import MHABlock, ModalityShiftFusion
from apps.modality_shift.patterns import ShiftPattern, build_pattern, identity_pattern
from apps.volumes.models import Modality

logger = logging.getLogger(__name__)


def _check_stack(op: str, feats: Tensor, pattern: ShiftPattern) -> None:
    if feats.ndim != 3 or feats.shape[0] != Modality.COUNT:
        raise ShapeError(op, [feats.shape], 'expected stacked (4, N, d) features')
    if feats.shape[1] != pattern.n_tokens:
        raise ShapeError(op, [feats.shape, pattern.sources.shape], 'pattern length differs from token count')


def shift(feats: Tensor, pattern: ShiftPattern) -> Tensor:
    """output[i, k] = feats[sources[i, k], k]; no parameters involved."""
    _check_stack('shift', feats, pattern)
    return F.gather(feats, 0, pattern.sources[:, :, None])


def unshift(feats: Tensor, pattern: ShiftPattern) -> Tensor:
    """Exact inverse of shift: output[sources[i, k], k] = feats[i, k]."""
    _check_stack('unshift', feats, pattern)
    return F.scatter(feats, 0, pattern.sources[:, :, None], Modality.COUNT)


def mha_block(x: Tensor, state: MHABlock) -> Tensor:
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ShapeError('mha_block', [x.shape], 'need a sequence of at least one token')
    return state(x)


def pattern_for(fusion: ModalityShiftFusion, n_tokens: int) -> ShiftPattern:
    return build_pattern(n_tokens) if fusion.mosaic else identity_pattern(n_tokens)


def modality_shift_forward(
    features: Tensor,
    fusion: ModalityShiftFusion,
    pattern: Optional[ShiftPattern] = None,
) -> Tensor:
    """
    Fuse the bottleneck streams (4, s, s, s, d) into (1, s, s, s, 4d).
    """
    if features.ndim != 5 or features.shape[0] != Modality.COUNT:
        raise ShapeError('modality_shift_forward', [features.shape], 'expected (4, s, s, s, d)')
    spatial, width = features.shape[1:4], features.shape[-1]
    n_tokens = spatial[0] * spatial[1] * spatial[2]
    pattern = pattern or pattern_for(fusion, n_tokens)

    tokens = F.reshape(features, (Modality.COUNT, n_tokens, width))
    mixed = mha_block(shift(tokens, pattern), fusion.spatial)
    restored = unshift(mixed, pattern)
    per_position = F.transpose(restored, (1, 0, 2))
    attended = F.transpose(mha_block(per_position, fusion.modality), (1, 0, 2))

    streams = F.reshape(attended, (Modality.COUNT,) + tuple(spatial) + (width,))
    fused = F.concat(
        [F.reshape(F.select(streams, 0, i), (1,) + tuple(spatial) + (width,)) for i in range(Modality.COUNT)],
        axis=-1,
    )
    logger.debug("shift layer at %s with %s pattern", spatial, 'mosaic' if not pattern.is_identity() else 'identity')
    return fused
