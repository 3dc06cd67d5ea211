"""
Backbone services.

Features:
- Encoding a volume into per-modality feature streams
- Decoding fused skips into region probabilities
- Fusion placement for a given MA:MS ratio
- Parameter and multiply-add accounting per module toggle
"""

import logging
from typing import List, Optional

from django.core.exceptions import ValidationError

from apps.backbone.config import BackboneConfig
from apps.backbone.models import FeatureSet, FusedSkip, FusionKind, MASMNet
from apps.core.rng import Rng
from apps.core.tensor import Tensor
from apps.modality_shift.models import DEFAULT_HEADS
from apps.volumes.models import Modality, MultiModalVolume, TumorRegion

logger = logging.getLogger(__name__)

KERNEL_VOLUME = 27
FFN_EXPANSION = 4


def placement(
    depth: int,
    aware_layers: Optional[int] = None,
    aware: bool = True,
    shift: bool = True,
) -> List[str]:
    """
    Fusion kind per layer (index 0 is layer 1).

    Layers 1..k take the Modality-Aware module and layers k+1..E the
    Modality-Shift module, k defaulting to E - 1. A disabled module leaves
    its layers with plain concatenation.
    """
    k = depth - 1 if aware_layers is None else aware_layers
    if not 0 <= k <= depth:
        raise ValidationError({'aware_layers': f"aware_layers must lie in [0, {depth}], got {k}"})
    kinds = []
    for j in range(1, depth + 1):
        if j <= k:
            kinds.append(FusionKind.AWARE if aware else FusionKind.CONCAT)
        else:
            kinds.append(FusionKind.SHIFT if shift else FusionKind.CONCAT)
    return kinds


def check_placement(cfg: BackboneConfig, kinds: List[str], heads: int = DEFAULT_HEADS) -> None:
    """
    Width constraints of the fusion modules.

    Raises:
        ValidationError: naming the first offending layer
    """
    errors = {}
    for j, kind in zip(cfg.layers, kinds):
        width = cfg.width(j)
        if kind == FusionKind.AWARE and (width < 2 or width % 2):
            errors.setdefault('channels', f"layer {j} width {width} must be even for the aware module")
        if kind == FusionKind.SHIFT and (heads < 1 or width % heads):
            errors.setdefault('heads', f"layer {j} width {width} is not divisible by {heads} heads")
    if errors:
        raise ValidationError(errors)


def build_network(
    cfg: BackboneConfig,
    rng: Rng,
    aware: bool = True,
    shift: bool = True,
    aware_layers: Optional[int] = None,
    heads: int = DEFAULT_HEADS,
    **options,
) -> MASMNet:
    kinds = placement(cfg.depth, aware_layers, aware, shift)
    check_placement(cfg, kinds, heads)
    return MASMNet(cfg, kinds, rng, heads=heads, **options)


def encode(volume: MultiModalVolume, model: MASMNet) -> FeatureSet:
    """
    Run the shared encoder over the four modalities of ``volume``.

    Raises:
        ShapeError: when the volume extents do not match the model config
    """
    return model.encoder(model.input_tensor(volume.voxels))


def decode(fused: FusedSkip, model: MASMNet) -> Tensor:
    """(V, V, V, 3) probabilities in (ET, WT, TC) order."""
    return model.decoder(fused)


def _conv_parameters(in_channels: int, out_channels: int, kernel_volume: int = KERNEL_VOLUME) -> int:
    return kernel_volume * in_channels * out_channels + out_channels


def _block_parameters(in_channels: int, out_channels: int) -> int:
    return _conv_parameters(in_channels, out_channels) + 2 * out_channels


def _aware_parameters(width: int) -> int:
    hidden = width // 2
    predictor = (width * hidden + hidden) + (2 * hidden * hidden + hidden) + (hidden * 2 + 2)
    pair = 3 * width * width + (width * FFN_EXPANSION * width + FFN_EXPANSION * width) \
        + (FFN_EXPANSION * width * width + width)
    return predictor + len(Modality.PAIRS) * pair


def _shift_parameters(width: int) -> int:
    block = 2 * width + 4 * width * width
    return 2 * block


def parameter_count(
    cfg: BackboneConfig,
    aware: bool = False,
    shift: bool = False,
    aware_layers: Optional[int] = None,
    heads: int = DEFAULT_HEADS,
) -> int:
    """
    Exact number of trainable scalars for the given module toggles.

    Counted from the layer shapes, so full-scale configs need no weights.
    The shift pattern owns no parameters and does not enter the count.
    """
    cfg.clean()
    kinds = placement(cfg.depth, aware_layers, aware, shift)
    check_placement(cfg, kinds, heads)
    total = 0
    in_channels = 1
    for j, kind in zip(cfg.layers, kinds):
        width = cfg.width(j)
        total += _block_parameters(in_channels, width) + _block_parameters(width, width)
        in_channels = width
        if kind == FusionKind.AWARE:
            total += _aware_parameters(width)
        elif kind == FusionKind.SHIFT:
            total += _shift_parameters(width)

    in_channels = cfg.channels[-1]
    for j in range(cfg.depth, 1, -1):
        out_channels = cfg.channels[j - 2]
        total += _block_parameters(in_channels, out_channels)
        in_channels = 2 * out_channels
    total += _block_parameters(in_channels, cfg.channels[0])
    total += _conv_parameters(cfg.channels[0], TumorRegion.COUNT, kernel_volume=1)
    return total


def _conv_macs(voxels: int, in_channels: int, out_channels: int, kernel_volume: int = KERNEL_VOLUME) -> int:
    return voxels * kernel_volume * in_channels * out_channels


def _aware_macs(tokens: int, width: int) -> int:
    hidden = width // 2
    predictor = tokens * (width * hidden + 2 * hidden * hidden + hidden * 2)
    attention = tokens * (2 * 3 * width * width + 2 * 2 * 2 * width)
    ffn = tokens * 2 * 2 * width * FFN_EXPANSION * width
    pair = 2 * predictor + attention + ffn
    return len(Modality.PAIRS) * pair


def _shift_macs(tokens: int, width: int) -> int:
    streams = Modality.COUNT
    spatial = streams * (tokens * 4 * width * width + 2 * tokens * tokens * width)
    modality = tokens * (streams * 4 * width * width + 2 * streams * streams * width)
    return spatial + modality


def flop_count(
    cfg: BackboneConfig,
    aware: bool = False,
    shift: bool = False,
    aware_layers: Optional[int] = None,
) -> int:
    """
    Analytic multiply-add estimate of one forward pass.

    Convolutions and attention matrix products are counted; normalization,
    activations and the token shift itself add nothing.
    """
    cfg.clean()
    kinds = placement(cfg.depth, aware_layers, aware, shift)
    total = 0
    in_channels = 1
    for j in cfg.layers:
        voxels = cfg.token_count(j)
        width = cfg.width(j)
        total += Modality.COUNT * (_conv_macs(voxels, in_channels, width) + _conv_macs(voxels, width, width))
        in_channels = width

        kind = kinds[j - 1]
        if kind == FusionKind.AWARE:
            total += _aware_macs(voxels, width)
        elif kind == FusionKind.SHIFT:
            total += _shift_macs(voxels, width)

    in_channels = cfg.channels[-1]
    for j in range(cfg.depth, 1, -1):
        out_channels = cfg.channels[j - 2]
        total += _conv_macs(cfg.token_count(j), in_channels, out_channels)
        in_channels = 2 * out_channels
    total += _conv_macs(cfg.token_count(1), in_channels, cfg.channels[0])
    total += _conv_macs(cfg.volume_size ** 3, cfg.channels[0], TumorRegion.COUNT, kernel_volume=1)
    logger.debug("flop estimate for %s: %d", kinds, total)
    return total
