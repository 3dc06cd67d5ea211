"""
Fixed mosaic shift patterns.

A pattern assigns, for every token position k, the source modality each
output modality reads from. Every column is a permutation of the four
modalities and never pairs a modality with its clinical partner, so shifting
back is exact.
"""

from dataclasses import dataclass

import numpy as np

from apps.core.exceptions import ShapeError
from apps.volumes.models import Modality

# Source modality per output modality (0-based, Modality order).
IDENTITY = (0, 1, 2, 3)
SWAP_ADJACENT = (1, 0, 3, 2)   # (T2 T1)(T1-CE FLAIR)
SWAP_HALVES = (2, 3, 0, 1)     # (T2 T1-CE)(T1 FLAIR)

MOSAIC_CYCLE = (IDENTITY, SWAP_ADJACENT, SWAP_HALVES)


@dataclass(frozen=True, eq=False)
class ShiftPattern:
    """
    sources[i, k]: modality that output modality i takes its token k from.
    """

    sources: np.ndarray

    def __post_init__(self) -> None:
        sources = np.asarray(self.sources, dtype=np.int64)
        sources.setflags(write=False)
        object.__setattr__(self, 'sources', sources)

    @property
    def n_tokens(self) -> int:
        return self.sources.shape[1]

    def inverse(self) -> np.ndarray:
        """targets[j, k]: output modality that reads modality j at position k."""
        targets = np.empty_like(self.sources)
        columns = np.arange(self.n_tokens)
        targets[self.sources, columns[None, :]] = np.arange(Modality.COUNT)[:, None]
        return targets

    def is_permutation(self) -> bool:
        ordered = np.sort(self.sources, axis=0)
        return bool(np.all(ordered == np.arange(Modality.COUNT)[:, None]))

    def excludes_partners(self) -> bool:
        partners = np.array([Modality.PARTNER[i] for i in range(Modality.COUNT)])[:, None]
        return bool(np.all(self.sources != partners))

    def is_identity(self) -> bool:
        return bool(np.all(self.sources == np.arange(Modality.COUNT)[:, None]))

    def one_based(self) -> np.ndarray:
        return self.sources + 1

    def validate(self) -> None:
        if self.sources.ndim != 2 or self.sources.shape[0] != Modality.COUNT:
            raise ShapeError('ShiftPattern', [self.sources.shape], 'expected (4, N)')
        if not self.is_permutation():
            raise ShapeError('ShiftPattern', [self.sources.shape], 'a column is not a permutation')
        if not self.excludes_partners():
            raise ShapeError('ShiftPattern', [self.sources.shape], 'a modality reads from its partner')


def build_pattern(n_tokens: int) -> ShiftPattern:
    """Cyclic mosaic: position k uses permutation number k mod 3."""
    if n_tokens < 1:
        raise ShapeError('build_pattern', [(n_tokens,)], 'need at least one token')
    cycle = np.array(MOSAIC_CYCLE, dtype=np.int64).T          # (4, 3)
    return ShiftPattern(cycle[:, np.arange(n_tokens) % len(MOSAIC_CYCLE)])


def identity_pattern(n_tokens: int) -> ShiftPattern:
    if n_tokens < 1:
        raise ShapeError('identity_pattern', [(n_tokens,)], 'need at least one token')
    return ShiftPattern(np.repeat(np.arange(Modality.COUNT)[:, None], n_tokens, axis=1))
