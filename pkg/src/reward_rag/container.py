"""Versioned binary container shared by index files and checkpoints.

Layout (all integers little-endian)::

    magic       8 bytes
    version     uint32
    n_fields    uint32
    fields      n_fields x uint64        (shape header, e.g. dim, count)
    meta_len    uint32
    meta        meta_len bytes of UTF-8 JSON
    payload     packed arrays in declared order
    checksum    uint64, blake2b-64 of every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import IntegrityError, UnsupportedFormatError


def _checksum(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def write_container(path, magic: bytes, version: int, fields, meta: dict, arrays, dtype: str) -> None:
    """Write ``arrays`` (in order) packed as little-endian ``dtype``."""
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    fields = [int(f) for f in fields]
    meta_bytes = json.dumps(meta, sort_keys=True, ensure_ascii=False).encode("utf-8")
    parts = [
        magic,
        struct.pack("<II", version, len(fields)),
        struct.pack(f"<{len(fields)}Q", *fields),
        struct.pack("<I", len(meta_bytes)),
        meta_bytes,
    ]
    le = np.dtype(dtype).newbyteorder("<")
    for arr in arrays:
        parts.append(np.ascontiguousarray(arr, dtype=le).tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<Q", _checksum(body)))


def read_container(path, magic: bytes, supported_versions, dtype: str, shapes_from_fields):
    """Read a container and return ``(version, fields, meta, arrays)``.

    ``shapes_from_fields`` maps the integer header to the list of array shapes
    stored in the payload, so truncation is detected before any parsing.
    """
    data = Path(path).read_bytes()
    if len(data) < 8 + 8 + 8:
        raise IntegrityError(f"{path}: file too short to be a container")
    body, tail = data[:-8], data[-8:]
    if _checksum(body) != struct.unpack("<Q", tail)[0]:
        raise IntegrityError(f"{path}: checksum mismatch")
    if body[:8] != magic:
        raise UnsupportedFormatError(f"{path}: bad magic {body[:8]!r}, expected {magic!r}")
    version, n_fields = struct.unpack_from("<II", body, 8)
    if version not in supported_versions:
        raise UnsupportedFormatError(
            f"{path}: format version {version} not supported (supported: {sorted(supported_versions)})"
        )
    off = 16
    fields = list(struct.unpack_from(f"<{n_fields}Q", body, off))
    off += 8 * n_fields
    (meta_len,) = struct.unpack_from("<I", body, off)
    off += 4
    meta = json.loads(body[off : off + meta_len].decode("utf-8"))
    off += meta_len
    le = np.dtype(dtype).newbyteorder("<")
    arrays = []
    for shape in shapes_from_fields(fields):
        n = int(np.prod(shape, dtype=np.int64))
        nbytes = n * le.itemsize
        if off + nbytes > len(body):
            raise IntegrityError(f"{path}: payload shorter than header declares")
        arr = np.frombuffer(body, dtype=le, count=n, offset=off).reshape(shape)
        arrays.append(arr.astype(np.dtype(dtype), copy=True))
        off += nbytes
    if off != len(body):
        raise IntegrityError(f"{path}: {len(body) - off} trailing bytes after payload")
    return version, fields, meta, arrays
