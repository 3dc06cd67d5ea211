"""
Shared-encoder U-Net with pluggable skip fusion.

Demonstrates:
- One encoder whose weights serve all four modality streams
- Per-layer fusion chosen by placement (concatenation, aware, shift)
- A decoder that upsamples and concatenates fused skips
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from apps.backbone.config import BackboneConfig
from apps.core import functional as F
from apps.core.exceptions import ShapeError
from apps.core.layers import Conv3d
from apps.core.mixins import Module
from apps.core.rng import Rng
from apps.core.tensor import Tensor
from apps.modality_aware.models import ModalityAwareFusion
from apps.modality_aware.services import DEFAULT_TAU, modality_aware_forward
from apps.modality_shift.models import DEFAULT_HEADS, ModalityShiftFusion
from apps.modality_shift.services import modality_shift_forward
from apps.volumes.models import Modality, TumorRegion

logger = logging.getLogger(__name__)

SPATIAL_AXES = (1, 2, 3)


class FusionKind:
    """Enum-like class for the skip fusion applied at a layer."""

    CONCAT = 'concat'
    AWARE = 'aware'
    SHIFT = 'shift'

    CHOICES = [
        (CONCAT, 'Plain concatenation'),
        (AWARE, 'Modality-Aware'),
        (SHIFT, 'Modality-Shift'),
    ]


@dataclass
class FeatureSet:
    """
    Encoder outputs: levels[j - 1] is a (4, s_j, s_j, s_j, C_j / 4) stack.
    """

    levels: List[Tensor]

    def feature(self, modality: int, layer: int) -> Tensor:
        """F^i_j for 0-based modality index and 1-based layer."""
        return F.select(self.levels[layer - 1], 0, modality)

    def shape(self, modality: int, layer: int):
        return self.levels[layer - 1].shape[1:]

    @property
    def depth(self) -> int:
        return len(self.levels)


@dataclass
class FusedSkip:
    """Fused skips: levels[j - 1] has shape (1, s_j, s_j, s_j, C_j)."""

    levels: List[Optional[Tensor]]
    keep_ratios: Dict[int, Dict[str, float]] = field(default_factory=dict)


def merge_streams(stack: Tensor) -> Tensor:
    """Concatenate the four modality streams along channels."""
    return F.concat(
        [F.narrow(stack, 0, i, i + 1) for i in range(stack.shape[0])], axis=-1
    )


class ConvBlock(Module):
    """conv3d -> per-channel instance normalization -> ReLU."""

    def __init__(self, in_channels: int, out_channels: int, rng: Rng, stride: int = 1):
        super().__init__()
        self.conv = self.add_module('conv', Conv3d(in_channels, out_channels, rng, stride=stride))
        self.gamma = self.add_parameter('gamma', np.ones(out_channels))
        self.beta = self.add_parameter('beta', np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        normalized = F.layernorm(self.conv(x), axes=SPATIAL_AXES)
        return F.relu(normalized * self.gamma + self.beta)


class EncoderLayer(Module):
    """Stride-2 block followed by a stride-1 block."""

    def __init__(self, in_channels: int, out_channels: int, rng: Rng):
        super().__init__()
        self.down = self.add_module('down', ConvBlock(in_channels, out_channels, rng, stride=2))
        self.refine = self.add_module('refine', ConvBlock(out_channels, out_channels, rng))

    def forward(self, x: Tensor) -> Tensor:
        return self.refine(self.down(x))


class SharedEncoder(Module):
    """Encoder applied to the modalities as a batch of four single-channel volumes."""

    def __init__(self, cfg: BackboneConfig, rng: Rng):
        super().__init__()
        self.cfg = cfg
        self.layers: List[EncoderLayer] = []
        in_channels = 1
        for j in cfg.layers:
            layer = EncoderLayer(in_channels, cfg.width(j), rng)
            self.layers.append(self.add_module(f'layer{j}', layer))
            in_channels = cfg.width(j)

    def forward(self, x: Tensor) -> FeatureSet:
        levels = []
        for layer in self.layers:
            x = layer(x)
            levels.append(x)
        return FeatureSet(levels)


class Decoder(Module):
    """
    Stage j (E down to 2): conv block to C_{j-1}, 2x upsample, concatenate
    with F'_{j-1}. Then a final block at layer 1, upsample to full
    resolution, a 1x1x1 head to three logits and a sigmoid.
    """

    def __init__(self, cfg: BackboneConfig, rng: Rng):
        super().__init__()
        self.cfg = cfg
        self.stages: Dict[int, ConvBlock] = {}
        in_channels = cfg.channels[-1]
        for j in range(cfg.depth, 1, -1):
            out_channels = cfg.channels[j - 2]
            self.stages[j] = self.add_module(f'stage{j}', ConvBlock(in_channels, out_channels, rng))
            in_channels = 2 * out_channels
        self.final = self.add_module('final', ConvBlock(in_channels, cfg.channels[0], rng))
        self.head = self.add_module('head', Conv3d(cfg.channels[0], TumorRegion.COUNT, rng, kernel_size=1))

    def logits(self, fused: FusedSkip) -> Tensor:
        depth = self.cfg.depth
        if len(fused.levels) != depth or any(level is None for level in fused.levels):
            present = [j + 1 for j, level in enumerate(fused.levels) if level is not None]
            raise ShapeError('decode', [(depth,), tuple(present)], 'a skip level is missing')
        x = fused.levels[depth - 1]
        for j in range(depth, 1, -1):
            x = F.upsample2x(self.stages[j](x))
            x = F.concat([x, fused.levels[j - 2]], axis=-1)
        x = F.upsample2x(self.final(x))
        v = self.cfg.volume_size
        return F.reshape(self.head(x), (v, v, v, TumorRegion.COUNT))

    def forward(self, fused: FusedSkip) -> Tensor:
        return F.sigmoid(self.logits(fused))


@dataclass
class NetworkOutput:
    probabilities: Tensor
    features: FeatureSet
    fused: FusedSkip


class MASMNet(Module):
    """
    Full network: shared encoder, per-layer skip fusion, decoder.

    ``placement`` lists one FusionKind per encoder layer.
    """

    def __init__(
        self,
        cfg: BackboneConfig,
        placement: Sequence[str],
        rng: Rng,
        heads: int = DEFAULT_HEADS,
        tau: float = DEFAULT_TAU,
        mosaic: bool = True,
        gumbel_hard: bool = True,
    ):
        super().__init__()
        cfg.clean()
        if len(placement) != cfg.depth:
            raise ShapeError('MASMNet', [(cfg.depth,), (len(placement),)], 'one fusion kind per layer')
        self.cfg = cfg
        self.placement = tuple(placement)
        self.tau = tau
        self.gumbel_hard = gumbel_hard
        self.encoder = self.add_module('encoder', SharedEncoder(cfg, rng))
        self.fusions: Dict[int, Module] = {}
        for j, kind in zip(cfg.layers, self.placement):
            if kind == FusionKind.AWARE:
                self.fusions[j] = self.add_module(f'aware{j}', ModalityAwareFusion(cfg.width(j), rng))
            elif kind == FusionKind.SHIFT:
                self.fusions[j] = self.add_module(
                    f'shift{j}', ModalityShiftFusion(cfg.width(j), heads, rng, mosaic=mosaic)
                )
        self.decoder = self.add_module('decoder', Decoder(cfg, rng))

    def input_tensor(self, voxels: np.ndarray) -> Tensor:
        """(4, V, V, V) voxels -> (4, V, V, V, 1) encoder batch."""
        v = self.cfg.volume_size
        if voxels.shape != (Modality.COUNT, v, v, v):
            raise ShapeError('encode', [voxels.shape, (Modality.COUNT, v, v, v)], 'volume does not match config')
        return Tensor(voxels[..., None])

    def fuse(self, features: FeatureSet, rng: Optional[Rng] = None) -> FusedSkip:
        fused = FusedSkip(levels=[])
        for j, kind in zip(self.cfg.layers, self.placement):
            stack = features.levels[j - 1]
            if kind == FusionKind.AWARE:
                result = modality_aware_forward(
                    stack, self.fusions[j], self.tau, rng, self.training, self.gumbel_hard
                )
                fused.levels.append(result.fused)
                fused.keep_ratios[j] = result.keep_ratios
            elif kind == FusionKind.SHIFT:
                fused.levels.append(modality_shift_forward(stack, self.fusions[j]))
            else:
                fused.levels.append(merge_streams(stack))
        return fused

    def forward(self, voxels: np.ndarray, rng: Optional[Rng] = None) -> NetworkOutput:
        features = self.encoder(self.input_tensor(voxels))
        fused = self.fuse(features, rng)
        return NetworkOutput(self.decoder(fused), features, fused)

    def parameter_groups(self) -> Dict[str, List[str]]:
        """Parameter names grouped by top-level component."""
        groups: Dict[str, List[str]] = {}
        for name, _ in self.named_parameters():
            parts = name.split('.')
            group = '.'.join(parts[:2]) if parts[0] in ('encoder', 'decoder') else parts[0]
            groups.setdefault(group, []).append(name)
        return groups
