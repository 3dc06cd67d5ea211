"""
Modality-Aware fusion for the clinically paired modalities.

The pipeline per pair is: predict masks, prune, paired self-attention,
substitute pruned tokens with the partner's token at the same position.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from apps.core import functional as F
from apps.core.exceptions import SamplingError, ShapeError
from apps.core.gumbel import gumbel_softmax
from apps.core.rng import Rng
from apps.core.tensor import Tensor
from apps.modality_aware.models import DecisionMask, MaskPredictor, ModalityAwareFusion, PairAttention
from apps.volumes.models import Modality

logger = logging.getLogger(__name__)

DEFAULT_TAU = 1.0


@dataclass
class AwareResult:
    """Output of one Modality-Aware layer."""

    fused: Tensor
    masks: Dict[int, DecisionMask]
    probabilities: Dict[int, Tensor]

    @property
    def keep_ratios(self) -> Dict[str, float]:
        return {Modality.label(i): mask.keep_ratio for i, mask in sorted(self.masks.items())}


def predict_mask(
    feat: Tensor,
    predictor: MaskPredictor,
    tau: float = DEFAULT_TAU,
    rng: Optional[Rng] = None,
    training: bool = False,
    hard: bool = True,
) -> Tuple[Tensor, DecisionMask]:
    """
    Keep probabilities ``pi`` (column 0 = keep) and a decision mask.

    Training samples the mask with Gumbel-Softmax; inference takes the row
    argmax and consumes no randomness.
    """
    if feat.ndim < 2 or feat.shape[-2] == 0:
        raise ShapeError('predict_mask', [feat.shape], 'no tokens to score')
    logits = predictor(feat)
    pi = F.softmax(logits)
    if training:
        if rng is None:
            raise SamplingError("training-mode mask prediction needs an Rng")
        sample = gumbel_softmax(logits, tau, hard, rng)
        keep = F.select(sample, -1, 0)
    else:
        keep = Tensor((pi.data[..., 0] >= pi.data[..., 1]).astype(np.float64))
    return pi, DecisionMask(keep)


def prune(feat: Tensor, mask: DecisionMask) -> Tensor:
    """Hadamard product of the token rows with the mask."""
    if feat.shape[:-1] != mask.values.shape:
        raise ShapeError('prune', [feat.shape, mask.values.shape], 'mask length differs from token count')
    return feat * mask.column()


def pair_attention(featA: Tensor, featB: Tensor, state: PairAttention) -> Tuple[Tensor, Tensor]:
    """
    Self-attention over the two-token sequence (A_k, B_k) at every position k.

    Positions never mix: the tokens are reshaped to a batch of N sequences.
    """
    if featA.shape != featB.shape or featA.ndim != 2:
        raise ShapeError('pair_attention', [featA.shape, featB.shape], 'expected equal (N, d) shapes')
    n, d = featA.shape
    z = F.concat([F.reshape(featA, (n, 1, d)), F.reshape(featB, (n, 1, d))], axis=1)
    h = state(z)
    return F.select(h, 1, 0), F.select(h, 1, 1)


def substitute_masked(
    hA: Tensor, hB: Tensor, maskA: DecisionMask, maskB: DecisionMask
) -> Tuple[Tensor, Tensor]:
    """
    Replace each pruned token with the partner's token when the partner kept it.

    Both kept or both pruned leaves the token as it is.
    """
    if not (hA.shape == hB.shape and hA.shape[:-1] == maskA.values.shape == maskB.values.shape):
        raise ShapeError(
            'substitute_masked', [hA.shape, hB.shape, maskA.values.shape, maskB.values.shape],
            'token counts differ'
        )
    keepA, keepB = maskA.column(), maskB.column()
    takeB = (1.0 - keepA) * keepB
    takeA = (1.0 - keepB) * keepA
    fusedA = hA * (1.0 - takeB) + hB * takeB
    fusedB = hB * (1.0 - takeA) + hA * takeA
    return fusedA, fusedB


def modality_aware_forward(
    features: Tensor,
    fusion: ModalityAwareFusion,
    tau: float = DEFAULT_TAU,
    rng: Optional[Rng] = None,
    training: bool = False,
    hard: bool = True,
) -> AwareResult:
    """
    Fuse one layer's four modality streams (4, s, s, s, d) into (1, s, s, s, 4d).

    Pair (T2, FLAIR) runs before pair (T1, T1-CE), which fixes the order in
    which the two pairs draw from ``rng``.
    """
    streams, spatial = features.shape[0], features.shape[1:4]
    width = features.shape[-1]
    if streams != Modality.COUNT:
        raise ShapeError('modality_aware_forward', [features.shape], 'expected four modality streams')
    tokens = F.reshape(features, (streams, int(np.prod(spatial)), width))

    outputs: Dict[int, Tensor] = {}
    masks: Dict[int, DecisionMask] = {}
    probabilities: Dict[int, Tensor] = {}
    for pair_index, (a, b) in enumerate(Modality.PAIRS):
        featA, featB = F.select(tokens, 0, a), F.select(tokens, 0, b)
        pair_tokens = F.concat(
            [F.reshape(featA, (1,) + featA.shape), F.reshape(featB, (1,) + featB.shape)], axis=0
        )
        pi, pair_mask = predict_mask(pair_tokens, fusion.predictor, tau, rng, training, hard)
        maskA = DecisionMask(F.select(pair_mask.values, 0, 0))
        maskB = DecisionMask(F.select(pair_mask.values, 0, 1))

        hA, hB = pair_attention(prune(featA, maskA), prune(featB, maskB), fusion.pair_state(pair_index))
        outputs[a], outputs[b] = substitute_masked(hA, hB, maskA, maskB)
        masks[a], masks[b] = maskA, maskB
        probabilities[a], probabilities[b] = F.select(pi, 0, 0), F.select(pi, 0, 1)

    fused = F.concat(
        [F.reshape(outputs[i], (1,) + tuple(spatial) + (width,)) for i in range(streams)], axis=-1
    )
    result = AwareResult(fused=fused, masks=masks, probabilities=probabilities)
    logger.debug("aware layer at %s keep ratios %s", spatial, result.keep_ratios)
    return result
