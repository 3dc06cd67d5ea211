"""
Case generation and case manifests.
"""

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

from apps.core.exceptions import VolumeFormatError
from apps.volumes.formats import atomic_write, read_volume, write_volume
from apps.volumes.models import MultiModalVolume, PhantomSpec
from apps.volumes.phantoms import gen_phantom

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.tsv'
MANIFEST_FIELDS = ('case_id', 'seed', 'file')
CASE_STREAM_BITS = 16

PathLike = Union[str, Path]


@dataclass(frozen=True)
class ManifestEntry:
    case_id: str
    seed: int
    file: str


def case_seed(seed: int, index: int) -> int:
    """Seed of case ``index`` in a run seeded with ``seed``."""
    return (seed << CASE_STREAM_BITS) | index


def write_manifest(path: PathLike, entries: List[ManifestEntry]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, delimiter='\t', lineterminator='\n')
    writer.writerow(MANIFEST_FIELDS)
    for entry in entries:
        writer.writerow([entry.case_id, entry.seed, entry.file])
    atomic_write(path, buffer.getvalue().encode('utf-8'))


def read_manifest(path: PathLike) -> List[ManifestEntry]:
    """
    Raises:
        VolumeFormatError: on a missing header or malformed row
    """
    with open(path, newline='', encoding='utf-8') as handle:
        reader = csv.reader(handle, delimiter='\t')
        header = next(reader, None)
        if tuple(header or ()) != MANIFEST_FIELDS:
            raise VolumeFormatError(f"manifest {path} has header {header}, expected {MANIFEST_FIELDS}")
        entries = []
        for line, row in enumerate(reader, start=2):
            if len(row) != len(MANIFEST_FIELDS):
                raise VolumeFormatError(f"manifest {path} line {line}: expected 3 fields")
            try:
                entries.append(ManifestEntry(row[0], int(row[1]), row[2]))
            except ValueError:
                raise VolumeFormatError(f"manifest {path} line {line}: bad seed {row[1]!r}") from None
    return sorted(entries, key=lambda entry: entry.case_id)


def generate_cases(out_dir: PathLike, count: int, size: int, seed: int) -> List[ManifestEntry]:
    """
    Write ``count`` phantom cases and their manifest into ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for index in range(count):
        case_id = f'case_{index:04d}'
        spec = PhantomSpec.for_size(case_seed(seed, index), size)
        volume = gen_phantom(spec, case_id=case_id)
        filename = f'{case_id}.mmv'
        write_volume(out_dir / filename, volume)
        entries.append(ManifestEntry(case_id, spec.seed, filename))
        logger.info("wrote %s (seed %d)", filename, spec.seed)
    write_manifest(out_dir / MANIFEST_NAME, entries)
    return entries


def load_cases(data_dir: PathLike) -> List[MultiModalVolume]:
    """Read every case listed in ``data_dir``'s manifest, ordered by case id."""
    data_dir = Path(data_dir)
    cases = []
    for entry in read_manifest(data_dir / MANIFEST_NAME):
        volume = read_volume(data_dir / entry.file)
        volume.case_id = entry.case_id
        cases.append(volume)
    return cases
