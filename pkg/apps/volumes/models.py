"""
Volume data models.

Features:
- Fixed modality ordering and clinical pairing
- Nested tumor region labels
- Phantom generation parameters with validation
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from apps.core.exceptions import PhantomSpecError, ShapeError


class Modality:
    """Enum-like class for the four co-registered MRI sequences."""

    T2 = 0
    T1 = 1
    T1CE = 2
    FLAIR = 3

    CHOICES = [
        (T2, 'T2'),
        (T1, 'T1'),
        (T1CE, 'T1-CE'),
        (FLAIR, 'FLAIR'),
    ]

    # Clinically paired sequences (T2 with FLAIR, T1 with T1-CE).
    PARTNER = {T2: FLAIR, FLAIR: T2, T1: T1CE, T1CE: T1}
    PAIRS = ((T2, FLAIR), (T1, T1CE))

    COUNT = 4

    @classmethod
    def label(cls, index: int) -> str:
        return dict(cls.CHOICES)[index]


class TumorRegion:
    """Enum-like class for label channels, in output channel order."""

    ET = 0
    WT = 1
    TC = 2

    CHOICES = [
        (ET, 'ET'),
        (WT, 'WT'),
        (TC, 'TC'),
    ]

    NAMES = tuple(name for _, name in CHOICES)
    COUNT = 3


@dataclass
class MultiModalVolume:
    """
    Four co-registered intensity volumes and an optional label.

    voxels: (4, D, H, W) float array in Modality order
    label:  (D, H, W, 3) uint8 array in TumorRegion order, or None
    """

    voxels: np.ndarray
    label: Optional[np.ndarray] = None
    case_id: str = ''

    def __post_init__(self) -> None:
        self.voxels = np.asarray(self.voxels, dtype=np.float64)
        if self.voxels.ndim != 4:
            raise ShapeError('MultiModalVolume', [self.voxels.shape], 'expected (modalities, D, H, W)')
        if self.label is not None:
            self.label = np.asarray(self.label, dtype=np.uint8)
            if self.label.shape != self.extents + (TumorRegion.COUNT,):
                raise ShapeError(
                    'MultiModalVolume', [self.voxels.shape, self.label.shape],
                    'label extents differ from modality extents'
                )

    @property
    def extents(self) -> Tuple[int, int, int]:
        return tuple(self.voxels.shape[1:])

    @property
    def num_modalities(self) -> int:
        return self.voxels.shape[0]

    @property
    def has_label(self) -> bool:
        return self.label is not None

    def region(self, region: int) -> np.ndarray:
        """Boolean mask of one label channel."""
        return self.label[..., region].astype(bool)

    def is_nested(self) -> bool:
        """ET within TC within WT."""
        if self.label is None:
            return True
        et, wt, tc = (self.region(r) for r in (TumorRegion.ET, TumorRegion.WT, TumorRegion.TC))
        return bool(np.all(et <= tc) and np.all(tc <= wt))

    def replace(self, voxels: Optional[np.ndarray] = None, label: Optional[np.ndarray] = None) -> 'MultiModalVolume':
        return MultiModalVolume(
            voxels=self.voxels if voxels is None else voxels,
            label=self.label if label is None else label,
            case_id=self.case_id,
        )


def default_contrast() -> np.ndarray:
    """
    Contrast of each modality (rows) in each tumor compartment (columns:
    edema, necrotic core, enhancing tumor), added to the background level.
    """
    return np.array([
        [1.0, 0.6, 0.4],     # T2: water signal bright
        [-0.2, -0.5, -0.3],  # T1
        [0.0, -0.3, 1.2],    # T1-CE: enhancing rim bright
        [1.2, 0.4, 0.3],     # FLAIR: edema bright
    ])


@dataclass
class PhantomSpec:
    """
    Parameters of a synthetic multi-modal tumor phantom.

    Radius ranges are (min, max) voxel radii of concentric ellipsoids;
    they must be strictly decreasing WT > TC > ET.
    """

    seed: int = 0
    size: int = 32
    tumor_count: Tuple[int, int] = (1, 2)
    wt_radius: Tuple[float, float] = (5.0, 8.0)
    tc_radius: Tuple[float, float] = (3.0, 4.5)
    et_radius: Tuple[float, float] = (1.5, 2.5)
    contrast: np.ndarray = field(default_factory=default_contrast)
    background: Tuple[float, ...] = (1.0, 1.2, 1.1, 0.9)
    noise_sigma: float = 0.05

    def clean(self) -> None:
        """
        Validate the specification.

        Raises:
            PhantomSpecError: when any field is out of range
        """
        if self.size < 4:
            raise PhantomSpecError(f"size must be at least 4, got {self.size}")
        low, high = self.tumor_count
        if not 0 <= low <= high:
            raise PhantomSpecError(f"invalid tumor count range {self.tumor_count}")
        for name in ('wt_radius', 'tc_radius', 'et_radius'):
            r_min, r_max = getattr(self, name)
            if not 0 < r_min <= r_max:
                raise PhantomSpecError(f"invalid {name} range {(r_min, r_max)}")
        if not (self.et_radius[1] < self.tc_radius[0] and self.tc_radius[1] < self.wt_radius[0]):
            raise PhantomSpecError(
                "shell radii must be strictly decreasing WT > TC > ET: "
                f"wt={self.wt_radius} tc={self.tc_radius} et={self.et_radius}"
            )
        contrast = np.asarray(self.contrast)
        if contrast.shape != (Modality.COUNT, TumorRegion.COUNT):
            raise PhantomSpecError(f"contrast must be 4x3, got {contrast.shape}")
        if len(self.background) != Modality.COUNT:
            raise PhantomSpecError("background needs one level per modality")
        if self.noise_sigma < 0:
            raise PhantomSpecError(f"noise sigma must be non-negative, got {self.noise_sigma}")

    @classmethod
    def for_size(cls, seed: int, size: int, **overrides) -> 'PhantomSpec':
        """Default spec with the radius ranges scaled from the 32^3 defaults."""
        factor = size / 32.0
        scaled = {
            name: tuple(r * factor for r in getattr(cls, name))
            for name in ('wt_radius', 'tc_radius', 'et_radius')
        }
        scaled.update(overrides)
        return cls(seed=seed, size=size, **scaled)
