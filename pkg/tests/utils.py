"""
Shared fixtures for the test suite.
"""

from pathlib import Path

import numpy as np

from apps.backbone.config import BackboneConfig
from apps.core.rng import Rng
from apps.volumes.models import MultiModalVolume, PhantomSpec
from apps.volumes.phantoms import gen_phantom
from apps.volumes.preprocessing import normalize

FIXTURES = Path(__file__).resolve().parent / 'fixtures'

TINY_SETTINGS = [
    '--set', 'volume_size=8',
    '--set', 'depth=2',
    '--set', 'channels=8,16',
    '--set', 'heads=2',
    '--set', 'warmup_steps=1',
    '--set', 'augment=false',
]


def tiny_case(seed: int = 0) -> MultiModalVolume:
    """Normalized labeled phantom matching BackboneConfig.tiny()."""
    cfg = BackboneConfig.tiny()
    return normalize(gen_phantom(PhantomSpec.for_size(seed, cfg.volume_size), case_id=f'case_{seed}'))


def random_volume(seed: int, extents=(4, 4, 4), label: bool = True) -> MultiModalVolume:
    rng = Rng(seed)
    voxels = rng.normal((4,) + tuple(extents)) + 2.0
    mask = None
    if label:
        mask = (rng.random(tuple(extents) + (3,)) > 0.5).astype(np.uint8)
    return MultiModalVolume(voxels=voxels, label=mask, case_id=f'random_{seed}')
