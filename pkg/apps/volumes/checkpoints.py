"""
Parameter checkpoint format.

A checkpoint is a sequence of records followed by an 8-byte digest:
  u32 name length, utf-8 name, u32 rank, rank x u32 extents,
  float32 little-endian payload (row-major)
The trailing u64 is the FNV-1a 64-bit hash of every byte before it.
"""

import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from apps.core.exceptions import CheckpointError, DigestMismatchError
from apps.core.mixins import Module
from apps.volumes.formats import atomic_write

logger = logging.getLogger(__name__)

FNV_OFFSET = 0xcbf29ce484222325
FNV_PRIME = 0x100000001b3
MASK64 = (1 << 64) - 1

U32 = struct.Struct('<I')
U64 = struct.Struct('<Q')

PathLike = Union[str, Path]


def fnv1a64(data: bytes) -> int:
    digest = FNV_OFFSET
    for byte in data:
        digest = ((digest ^ byte) * FNV_PRIME) & MASK64
    return digest


def checkpoint_to_bytes(params: Mapping[str, np.ndarray]) -> bytes:
    parts = []
    for name, value in params.items():
        array = np.asarray(value)
        encoded = name.encode('utf-8')
        parts.append(U32.pack(len(encoded)))
        parts.append(encoded)
        parts.append(U32.pack(array.ndim))
        parts.extend(U32.pack(extent) for extent in array.shape)
        parts.append(array.astype('<f4').tobytes())
    body = b''.join(parts)
    return body + U64.pack(fnv1a64(body))


def _read_u32(body: bytes, offset: int) -> int:
    if offset + 4 > len(body):
        raise CheckpointError(f"truncated record header at byte {offset}")
    return U32.unpack_from(body, offset)[0]


def checkpoint_from_bytes(data: bytes) -> 'OrderedDict[str, np.ndarray]':
    """
    Raises:
        DigestMismatchError: when the stored digest disagrees with the body
        CheckpointError: on truncated or malformed records
    """
    if len(data) < U64.size:
        raise CheckpointError(f"checkpoint too short: {len(data)} bytes")
    body = data[:-U64.size]
    stored = U64.unpack_from(data, len(body))[0]
    actual = fnv1a64(body)
    if stored != actual:
        raise DigestMismatchError(stored, actual)

    params: 'OrderedDict[str, np.ndarray]' = OrderedDict()
    offset = 0
    while offset < len(body):
        length = _read_u32(body, offset)
        offset += 4
        if offset + length > len(body):
            raise CheckpointError(f"truncated parameter name at byte {offset}")
        try:
            name = body[offset:offset + length].decode('utf-8')
        except UnicodeDecodeError:
            raise CheckpointError(f"parameter name at byte {offset} is not utf-8") from None
        offset += length
        rank = _read_u32(body, offset)
        offset += 4
        extents = []
        for _ in range(rank):
            extents.append(_read_u32(body, offset))
            offset += 4
        count = int(np.prod(extents)) if extents else 1
        size = 4 * count
        if offset + size > len(body):
            raise CheckpointError(f"truncated payload for parameter '{name}'")
        if name in params:
            raise CheckpointError(f"duplicate parameter '{name}'")
        payload = np.frombuffer(body, dtype='<f4', count=count, offset=offset)
        params[name] = payload.reshape(extents).astype(np.float64)
        offset += size
    return params


def save_checkpoint(path: PathLike, params: Mapping[str, np.ndarray]) -> None:
    atomic_write(path, checkpoint_to_bytes(params))
    logger.debug("saved %d parameters to %s", len(params), path)


def load_checkpoint(path: PathLike) -> 'OrderedDict[str, np.ndarray]':
    return checkpoint_from_bytes(Path(path).read_bytes())


def restore(model: Module, path: PathLike) -> None:
    """
    Load ``path`` into ``model``.

    Raises:
        ParameterMismatchError: on unknown, missing or mis-shaped parameters
    """
    model.load_state_dict(load_checkpoint(path))
