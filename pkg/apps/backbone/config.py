"""
Backbone shape configuration.
"""

from dataclasses import dataclass
from typing import Tuple

from django.core.exceptions import ValidationError

from apps.volumes.models import Modality

FULL_CHANNELS = (96, 128, 192, 256, 384, 512)
DESK_CHANNELS = (16, 32, 64, 128)


@dataclass(frozen=True)
class BackboneConfig:
    """
    Volume size V, depth E and per-layer channels C_j of the U-Net.

    Layer j (1-based) runs at (V / 2^j)^3 voxels with C_j / 4 channels per
    modality stream.
    """

    volume_size: int = 32
    depth: int = 4
    channels: Tuple[int, ...] = DESK_CHANNELS
    modalities: int = Modality.COUNT

    @classmethod
    def desk(cls) -> 'BackboneConfig':
        return cls()

    @classmethod
    def full(cls) -> 'BackboneConfig':
        return cls(volume_size=128, depth=6, channels=FULL_CHANNELS)

    @classmethod
    def tiny(cls) -> 'BackboneConfig':
        """Smallest config used for gradient checking."""
        return cls(volume_size=8, depth=2, channels=(8, 16))

    def clean(self) -> None:
        """
        Validate the shape invariants.

        Raises:
            ValidationError: with a message per offending field
        """
        errors = {}
        if self.depth < 1:
            errors['depth'] = f"depth must be at least 1, got {self.depth}"
        elif self.volume_size < 2 ** self.depth or self.volume_size % (2 ** self.depth):
            errors['volume_size'] = (
                f"volume size {self.volume_size} must be divisible by 2^{self.depth}"
            )
        if len(self.channels) != self.depth:
            errors['channels'] = f"expected {self.depth} channel entries, got {len(self.channels)}"
        elif any(c <= 0 or c % 4 for c in self.channels):
            errors['channels'] = f"every channel count must be a positive multiple of 4: {self.channels}"
        elif any(b < a for a, b in zip(self.channels, self.channels[1:])):
            errors['channels'] = f"channels must be non-decreasing: {self.channels}"
        if self.modalities != Modality.COUNT:
            errors['modalities'] = f"exactly {Modality.COUNT} modalities are supported"
        if errors:
            raise ValidationError(errors)

    def spatial(self, layer: int) -> int:
        return self.volume_size // 2 ** layer

    def width(self, layer: int) -> int:
        """Per-modality channels of layer ``layer``."""
        return self.channels[layer - 1] // 4

    def token_count(self, layer: int) -> int:
        return self.spatial(layer) ** 3

    def feature_shape(self, layer: int) -> Tuple[int, int, int, int]:
        s = self.spatial(layer)
        return (s, s, s, self.width(layer))

    @property
    def layers(self) -> range:
        return range(1, self.depth + 1)
