"""
MMV1 volume file format.

Layout (little-endian):
  8 bytes  magic b"MMVOL\\0\\0\\1"
  5 x u32  D, H, W, num_modalities, has_label
  float32  modality rasters, modality-major, each row-major D x H x W
  uint8    optional label raster D x H x W x 3, channels (ET, WT, TC) last
A label-only mask file has num_modalities = 0 and has_label = 1.
"""

import os
import struct
import tempfile
from pathlib import Path
from typing import Union

import numpy as np

from apps.core.exceptions import VolumeFormatError
from apps.volumes.models import Modality, MultiModalVolume, TumorRegion

MAGIC = b'MMVOL\x00\x00\x01'
HEADER = struct.Struct('<5I')
HEADER_SIZE = len(MAGIC) + HEADER.size
MAX_VOXELS = 1 << 31

PathLike = Union[str, Path]


def volume_to_bytes(volume: MultiModalVolume) -> bytes:
    d, h, w = volume.extents
    header = HEADER.pack(d, h, w, volume.num_modalities, int(volume.has_label))
    parts = [MAGIC, header, volume.voxels.astype('<f4').tobytes()]
    if volume.has_label:
        parts.append(volume.label.astype(np.uint8).tobytes())
    return b''.join(parts)


def volume_from_bytes(data: bytes, case_id: str = '') -> MultiModalVolume:
    """
    Parse an MMV1 buffer.

    Raises:
        VolumeFormatError: bad magic, bad header, truncated or oversized payload
    """
    if len(data) < HEADER_SIZE:
        raise VolumeFormatError(f"file too short for an MMV1 header: {len(data)} bytes")
    if data[:len(MAGIC)] != MAGIC:
        raise VolumeFormatError(f"bad magic {data[:len(MAGIC)]!r}")
    d, h, w, modalities, has_label = HEADER.unpack_from(data, len(MAGIC))
    if has_label not in (0, 1):
        raise VolumeFormatError(f"has_label must be 0 or 1, got {has_label}")
    if modalities > Modality.COUNT:
        raise VolumeFormatError(f"at most {Modality.COUNT} modalities, got {modalities}")
    voxels = d * h * w
    if voxels == 0 or voxels > MAX_VOXELS:
        raise VolumeFormatError(f"extents {d}x{h}x{w} out of range")

    raster_size = 4 * modalities * voxels
    label_size = TumorRegion.COUNT * voxels if has_label else 0
    expected = HEADER_SIZE + raster_size + label_size
    if len(data) < expected:
        raise VolumeFormatError(f"truncated payload: expected {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise VolumeFormatError(f"{len(data) - expected} trailing bytes after payload")

    rasters = np.frombuffer(data, dtype='<f4', count=modalities * voxels, offset=HEADER_SIZE)
    label = None
    if has_label:
        label = np.frombuffer(data, dtype=np.uint8, count=label_size, offset=HEADER_SIZE + raster_size)
        if label.size and label.max() > 1:
            raise VolumeFormatError("label bytes must be 0 or 1")
        label = label.reshape(d, h, w, TumorRegion.COUNT).copy()
    return MultiModalVolume(
        voxels=rasters.reshape(modalities, d, h, w).astype(np.float64),
        label=label,
        case_id=case_id,
    )


def atomic_write(path: PathLike, payload: bytes) -> None:
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.')
    try:
        with os.fdopen(fd, 'wb') as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_volume(path: PathLike, volume: MultiModalVolume) -> None:
    atomic_write(path, volume_to_bytes(volume))


def read_volume(path: PathLike) -> MultiModalVolume:
    path = Path(path)
    return volume_from_bytes(path.read_bytes(), case_id=path.stem)


def write_mask(path: PathLike, label: np.ndarray) -> None:
    """Label-only MMV1 file."""
    label = np.asarray(label, dtype=np.uint8)
    empty = np.zeros((0,) + label.shape[:3])
    write_volume(path, MultiModalVolume(voxels=empty, label=label))
